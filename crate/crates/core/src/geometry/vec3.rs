//! Minimal fixed-size vector helpers used by the mesh and rendering code.

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}

#[inline]
pub fn add_assign(a: &mut Vec3, b: Vec3) {
    a[0] += b[0];
    a[1] += b[1];
    a[2] += b[2];
}

/// Unit normal of triangle `(a, b, c)` together with the length of the
/// unnormalized cross product.
#[inline]
pub fn face_normal(a: Vec3, b: Vec3, c: Vec3) -> (Vec3, f64) {
    let cr = cross(sub(b, a), sub(c, a));
    let len = norm(cr);
    if len > 0.0 {
        (scale(cr, 1.0 / len), len)
    } else {
        ([0.0; 3], 0.0)
    }
}

/// Backpropagates a gradient on the unit normal of `(a, b, c)` to the three
/// corner positions. Degenerate triangles receive no gradient.
pub fn face_normal_backward(a: Vec3, b: Vec3, c: Vec3, grad_n: Vec3) -> [Vec3; 3] {
    let e1 = sub(b, a);
    let e2 = sub(c, a);
    let cr = cross(e1, e2);
    let len = norm(cr);
    if len <= 1e-300 {
        return [[0.0; 3]; 3];
    }
    let n = scale(cr, 1.0 / len);
    // d(c/|c|) applied to grad_n
    let g_cross = scale(sub(grad_n, scale(n, dot(n, grad_n))), 1.0 / len);
    let g_b = cross(e2, g_cross);
    let g_c = cross(g_cross, e1);
    let g_a = scale(add(g_b, g_c), -1.0);
    [g_a, g_b, g_c]
}
