"""Fused collision evaluation for the solver hot loop.

The environment and self-collision terms dominate rollout scoring: for each
of N*H configurations they touch every robot sphere against the table, hand,
occlusion capsule, and every non-exempt sphere pair.  The numba kernel fuses
sphere placement and all signed distances into one pass per configuration;
a pure-numpy fallback keeps the package functional (and testable against the
kernel) when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap


@njit(cache=True, fastmath=False)
def _collision_kernel(link_R, link_t, sphere_local, sphere_link, radii,
                      pair_a, pair_b, pair_rsum,
                      table_center, table_he,
                      hand_center, hand_radius, have_hand,
                      cam_origin, occl_radius, out):
    B = link_R.shape[0]
    S = sphere_local.shape[0]
    P = pair_a.shape[0]
    centers = np.empty((S, 3))
    seg = np.empty(3)
    for b in range(B):
        # world sphere centers for this configuration
        for s in range(S):
            l = sphere_link[s]
            if l < 0:
                for k in range(3):
                    centers[s, k] = sphere_local[s, k]
            else:
                for k in range(3):
                    centers[s, k] = (link_R[b, l, k, 0] * sphere_local[s, 0]
                                     + link_R[b, l, k, 1] * sphere_local[s, 1]
                                     + link_R[b, l, k, 2] * sphere_local[s, 2]
                                     + link_t[b, l, k])

        # environment: minimum separation over spheres x {table, hand, capsule}
        min_sep = np.inf
        if have_hand:
            for k in range(3):
                seg[k] = hand_center[k] - cam_origin[k]
            seg_len2 = seg[0] * seg[0] + seg[1] * seg[1] + seg[2] * seg[2]
        else:
            seg_len2 = 0.0
        for s in range(S):
            # point-to-box signed distance
            out_d2 = 0.0
            max_in = -np.inf
            for k in range(3):
                q = abs(centers[s, k] - table_center[k]) - table_he[k]
                if q > 0.0:
                    out_d2 += q * q
                if q > max_in:
                    max_in = q
            box_d = np.sqrt(out_d2) if out_d2 > 0.0 else max_in
            sep = box_d - radii[s]
            if sep < min_sep:
                min_sep = sep
            if have_hand:
                dx = centers[s, 0] - hand_center[0]
                dy = centers[s, 1] - hand_center[1]
                dz = centers[s, 2] - hand_center[2]
                sep = np.sqrt(dx * dx + dy * dy + dz * dz) - hand_radius - radii[s]
                if sep < min_sep:
                    min_sep = sep
                # point-to-segment (camera -> hand)
                px = centers[s, 0] - cam_origin[0]
                py = centers[s, 1] - cam_origin[1]
                pz = centers[s, 2] - cam_origin[2]
                if seg_len2 > 1e-300:
                    t = (px * seg[0] + py * seg[1] + pz * seg[2]) / seg_len2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                else:
                    t = 0.0
                dx = px - t * seg[0]
                dy = py - t * seg[1]
                dz = pz - t * seg[2]
                sep = np.sqrt(dx * dx + dy * dy + dz * dz) - occl_radius - radii[s]
                if sep < min_sep:
                    min_sep = sep
        out[b, 0] = -min_sep

        # self collision: minimum separation over non-exempt pairs
        min_pair = np.inf
        for p in range(P):
            i, j = pair_a[p], pair_b[p]
            dx = centers[i, 0] - centers[j, 0]
            dy = centers[i, 1] - centers[j, 1]
            dz = centers[i, 2] - centers[j, 2]
            sep = np.sqrt(dx * dx + dy * dy + dz * dz) - pair_rsum[p]
            if sep < min_pair:
                min_pair = sep
        out[b, 1] = -min_pair if P > 0 else -np.inf


@njit(cache=True, fastmath=False)
def _rollout_terms_kernel(Q, V, origin_R, origin_t, axes, ee_R_off, ee_t_off,
                          task_rows, sphere_local, sphere_link, radii,
                          pair_a, pair_b, pair_rsum,
                          table_center, table_he, have_table,
                          hand_center, hand_radius, have_hand,
                          cam_origin, occl_radius,
                          goal_R, goal_t, alpha1, alpha2,
                          manip_m0, need_manip, need_sl,
                          ee_out, goal_min, goal_idx, sl_term, manip_term,
                          se_out, sr_out):
    """Fused per-configuration evaluation of every solver cost ingredient.

    One pass per row: chain FK, geometric Jacobian, sphere placement, scene
    and self signed distances, manipulability determinant, goal-set pose
    distance with argmin, and the straight-line direction term.
    """
    B, dof = Q.shape
    S = sphere_local.shape[0]
    P = pair_a.shape[0]
    G = goal_R.shape[0]
    R_T = task_rows.shape[0]

    link_R = np.empty((dof, 3, 3))
    link_t = np.empty((dof, 3))
    jorigin = np.empty((dof, 3))
    jaxis = np.empty((dof, 3))
    R = np.empty((3, 3))
    Rj = np.empty((3, 3))
    tmp = np.empty((3, 3))
    centers = np.empty((S, 3))
    J = np.empty((6, dof))
    M = np.empty((R_T, R_T))
    seg = np.empty(3)

    for b in range(B):
        # ---- chain forward kinematics
        for i in range(3):
            for k in range(3):
                R[i, k] = 1.0 if i == k else 0.0
        tx = ty = tz = 0.0
        for j in range(dof):
            # R_pre = R @ origin_R[j]; o = t + R @ origin_t[j]
            for i in range(3):
                for k in range(3):
                    tmp[i, k] = (R[i, 0] * origin_R[j, 0, k]
                                 + R[i, 1] * origin_R[j, 1, k]
                                 + R[i, 2] * origin_R[j, 2, k])
            ox = tx + R[0, 0] * origin_t[j, 0] + R[0, 1] * origin_t[j, 1] + R[0, 2] * origin_t[j, 2]
            oy = ty + R[1, 0] * origin_t[j, 0] + R[1, 1] * origin_t[j, 1] + R[1, 2] * origin_t[j, 2]
            oz = tz + R[2, 0] * origin_t[j, 0] + R[2, 1] * origin_t[j, 1] + R[2, 2] * origin_t[j, 2]
            # spin about the local axis (Rodrigues)
            c = np.cos(Q[b, j])
            s = np.sin(Q[b, j])
            ax, ay, az = axes[j, 0], axes[j, 1], axes[j, 2]
            ic = 1.0 - c
            Rj[0, 0] = c + ax * ax * ic
            Rj[0, 1] = ax * ay * ic - az * s
            Rj[0, 2] = ax * az * ic + ay * s
            Rj[1, 0] = ay * ax * ic + az * s
            Rj[1, 1] = c + ay * ay * ic
            Rj[1, 2] = ay * az * ic - ax * s
            Rj[2, 0] = az * ax * ic - ay * s
            Rj[2, 1] = az * ay * ic + ax * s
            Rj[2, 2] = c + az * az * ic
            for i in range(3):
                for k in range(3):
                    R[i, k] = (tmp[i, 0] * Rj[0, k] + tmp[i, 1] * Rj[1, k]
                               + tmp[i, 2] * Rj[2, k])
            tx, ty, tz = ox, oy, oz
            for i in range(3):
                for k in range(3):
                    link_R[j, i, k] = R[i, k]
            link_t[j, 0] = tx
            link_t[j, 1] = ty
            link_t[j, 2] = tz
            jorigin[j, 0] = tx
            jorigin[j, 1] = ty
            jorigin[j, 2] = tz
            for i in range(3):
                jaxis[j, i] = R[i, 0] * axes[j, 0] + R[i, 1] * axes[j, 1] + R[i, 2] * axes[j, 2]

        # end effector
        eex = tx + R[0, 0] * ee_t_off[0] + R[0, 1] * ee_t_off[1] + R[0, 2] * ee_t_off[2]
        eey = ty + R[1, 0] * ee_t_off[0] + R[1, 1] * ee_t_off[1] + R[1, 2] * ee_t_off[2]
        eez = tz + R[2, 0] * ee_t_off[0] + R[2, 1] * ee_t_off[1] + R[2, 2] * ee_t_off[2]
        ee_out[b, 0] = eex
        ee_out[b, 1] = eey
        ee_out[b, 2] = eez
        # ee rotation into tmp
        for i in range(3):
            for k in range(3):
                tmp[i, k] = (R[i, 0] * ee_R_off[0, k] + R[i, 1] * ee_R_off[1, k]
                             + R[i, 2] * ee_R_off[2, k])

        # ---- geometric Jacobian (rows: wx wy wz vx vy vz)
        for j in range(dof):
            zx, zy, zz = jaxis[j, 0], jaxis[j, 1], jaxis[j, 2]
            rx = eex - jorigin[j, 0]
            ry = eey - jorigin[j, 1]
            rz = eez - jorigin[j, 2]
            J[0, j] = zx
            J[1, j] = zy
            J[2, j] = zz
            J[3, j] = zy * rz - zz * ry
            J[4, j] = zz * rx - zx * rz
            J[5, j] = zx * ry - zy * rx

        # ---- goal set distance + argmin
        if G > 0:
            best = np.inf
            besti = -1
            for g in range(G):
                tr = 0.0
                for i in range(3):
                    for k in range(3):
                        tr += tmp[i, k] * goal_R[g, i, k]
                rot2 = 6.0 - 2.0 * tr
                rot = np.sqrt(rot2) if rot2 > 0.0 else 0.0
                dx = eex - goal_t[g, 0]
                dy = eey - goal_t[g, 1]
                dz = eez - goal_t[g, 2]
                d = alpha1 * rot + alpha2 * np.sqrt(dx * dx + dy * dy + dz * dz)
                if d < best:
                    best = d
                    besti = g
            goal_min[b] = best
            goal_idx[b] = besti

            if need_sl:
                vx = vy = vz = 0.0
                for j in range(dof):
                    vx += J[3, j] * V[b, j]
                    vy += J[4, j] * V[b, j]
                    vz += J[5, j] * V[b, j]
                gx = goal_t[besti, 0] - eex
                gy = goal_t[besti, 1] - eey
                gz = goal_t[besti, 2] - eez
                nv = np.sqrt(vx * vx + vy * vy + vz * vz)
                nd = np.sqrt(gx * gx + gy * gy + gz * gz)
                if nv > 1e-6 and nd > 1e-6:
                    sl_term[b] = 1.0 - (vx * gx + vy * gy + vz * gz) / (nv * nd)
                else:
                    sl_term[b] = 0.0

        # ---- manipulability hinge
        if need_manip:
            for i in range(R_T):
                for k in range(R_T):
                    acc = 0.0
                    ri = task_rows[i]
                    rk = task_rows[k]
                    for j in range(dof):
                        acc += J[ri, j] * J[rk, j]
                    M[i, k] = acc
            det = 1.0
            for i in range(R_T):
                piv = M[i, i]
                if piv < 0.0:
                    piv = 0.0
                det *= piv
                if i + 1 < R_T and piv > 0.0:
                    for r2 in range(i + 1, R_T):
                        f = M[r2, i] / piv
                        for k in range(i + 1, R_T):
                            M[r2, k] -= f * M[i, k]
            sq = np.sqrt(det) if det > 0.0 else 0.0
            manip_term[b] = manip_m0 - sq if sq < manip_m0 else 0.0

        # ---- spheres and signed distances
        if S > 0:
            for s2 in range(S):
                l = sphere_link[s2]
                if l < 0:
                    for k in range(3):
                        centers[s2, k] = sphere_local[s2, k]
                else:
                    for k in range(3):
                        centers[s2, k] = (link_R[l, k, 0] * sphere_local[s2, 0]
                                          + link_R[l, k, 1] * sphere_local[s2, 1]
                                          + link_R[l, k, 2] * sphere_local[s2, 2]
                                          + link_t[l, k])
            min_sep = np.inf
            if have_hand:
                for k in range(3):
                    seg[k] = hand_center[k] - cam_origin[k]
                seg_len2 = seg[0] * seg[0] + seg[1] * seg[1] + seg[2] * seg[2]
            else:
                seg_len2 = 0.0
            if have_table or have_hand:
                for s2 in range(S):
                    if have_table:
                        out_d2 = 0.0
                        max_in = -np.inf
                        for k in range(3):
                            q = abs(centers[s2, k] - table_center[k]) - table_he[k]
                            if q > 0.0:
                                out_d2 += q * q
                            if q > max_in:
                                max_in = q
                        box_d = np.sqrt(out_d2) if out_d2 > 0.0 else max_in
                        sep = box_d - radii[s2]
                        if sep < min_sep:
                            min_sep = sep
                    if have_hand:
                        dx = centers[s2, 0] - hand_center[0]
                        dy = centers[s2, 1] - hand_center[1]
                        dz = centers[s2, 2] - hand_center[2]
                        sep = np.sqrt(dx * dx + dy * dy + dz * dz) - hand_radius - radii[s2]
                        if sep < min_sep:
                            min_sep = sep
                        px = centers[s2, 0] - cam_origin[0]
                        py = centers[s2, 1] - cam_origin[1]
                        pz = centers[s2, 2] - cam_origin[2]
                        if seg_len2 > 1e-300:
                            t = (px * seg[0] + py * seg[1] + pz * seg[2]) / seg_len2
                            if t < 0.0:
                                t = 0.0
                            elif t > 1.0:
                                t = 1.0
                        else:
                            t = 0.0
                        dx = px - t * seg[0]
                        dy = py - t * seg[1]
                        dz = pz - t * seg[2]
                        sep = np.sqrt(dx * dx + dy * dy + dz * dz) - occl_radius - radii[s2]
                        if sep < min_sep:
                            min_sep = sep
            se_out[b] = -min_sep

            min_pair = np.inf
            for p in range(P):
                i2, j2 = pair_a[p], pair_b[p]
                dx = centers[i2, 0] - centers[j2, 0]
                dy = centers[i2, 1] - centers[j2, 1]
                dz = centers[i2, 2] - centers[j2, 2]
                sep = np.sqrt(dx * dx + dy * dy + dz * dz) - pair_rsum[p]
                if sep < min_pair:
                    min_pair = sep
            sr_out[b] = -min_pair if P > 0 else -np.inf


def rollout_terms(model, Q, V, goal_R, goal_t, scene, alpha1, alpha2,
                  manip_m0, need_manip, need_sl):
    """Numba-evaluated cost ingredients for configurations Q (B, dof).

    Returns a dict with ee positions, goal minima/argmin, straight-line term,
    manipulability hinge, and the two signed-distance terms.
    """
    B, dof = Q.shape
    out = {
        "ee": np.empty((B, 3)),
        "goal_min": np.zeros(B),
        "goal_idx": np.full(B, -1, dtype=np.int64),
        "sl": np.zeros(B),
        "manip": np.zeros(B),
        "se": np.full(B, -np.inf),
        "sr": np.full(B, -np.inf),
    }
    have_table = scene is not None
    have_hand = scene is not None and scene.hand is not None
    table_center = scene.table.center if have_table else np.zeros(3)
    table_he = scene.table.half_extents if have_table else np.ones(3)
    hand_center = scene.hand.center if have_hand else np.zeros(3)
    hand_radius = float(scene.hand.radius) if have_hand else 0.0
    cam = scene.camera_origin if scene is not None else np.zeros(3)
    occl = float(scene.occlusion_capsule_radius) if scene is not None else 0.0
    sphere_local = (np.stack([s.center for s in model.spheres])
                    if model.spheres else np.zeros((0, 3)))
    _rollout_terms_kernel(
        Q, V, model._origin_R, model._origin_t, model._axes,
        model.ee_offset.rotation, model.ee_offset.translation,
        np.asarray(model.task_rows, dtype=np.int64),
        sphere_local, model.sphere_links, model.sphere_radii,
        model._pair_a, model._pair_b, model._pair_radius_sum,
        table_center, table_he, have_table,
        hand_center, hand_radius, have_hand,
        cam, occl,
        goal_R, goal_t, alpha1, alpha2,
        manip_m0, need_manip, need_sl,
        out["ee"], out["goal_min"], out["goal_idx"], out["sl"], out["manip"],
        out["se"], out["sr"])
    return out


def collision_terms(model, kin, scene) -> tuple[np.ndarray, np.ndarray]:
    """(S_e, S_r) arrays of shape (B,) for a batch of kinematics.

    ``scene`` may be None (environment term returned as -inf).  Requires
    numba; callers fall back to the vectorized numpy path otherwise.
    """
    B = kin.ee_t.shape[0]
    if len(model.spheres) == 0:
        return np.full(B, -np.inf), np.full(B, -np.inf)
    out = np.empty((B, 2))
    have_hand = scene is not None and scene.hand is not None
    if scene is None:
        # keep the kernel signature: an unreachable table far below
        table_center = np.array([0.0, 0.0, -1e6])
        table_he = np.array([1e-3, 1e-3, 1e-3])
    else:
        table_center = scene.table.center
        table_he = scene.table.half_extents
    hand_center = scene.hand.center if have_hand else np.zeros(3)
    hand_radius = scene.hand.radius if have_hand else 0.0
    cam = scene.camera_origin if scene is not None else np.zeros(3)
    occl = scene.occlusion_capsule_radius if scene is not None else 0.0

    sphere_local = np.stack([s.center for s in model.spheres])
    _collision_kernel(kin.link_R, kin.joint_origin, sphere_local,
                      model.sphere_links, model.sphere_radii,
                      model._pair_a, model._pair_b, model._pair_radius_sum,
                      table_center, table_he,
                      hand_center, float(hand_radius), have_hand,
                      cam, float(occl), out)
    se = out[:, 0] if scene is not None else np.full(B, -np.inf)
    return se, out[:, 1]
