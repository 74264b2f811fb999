use nalgebra::Matrix3;

/// Rotation part of the polar decomposition of `a`, i.e. the proper rotation
/// closest to `a` in Frobenius norm.
pub fn best_rotation(a: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = a.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Matrix3::identity();
    };
    if (u * v_t).determinant() < 0.0 {
        // Flip the axis of the smallest singular value.
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(2);
        u.column_mut(smallest).neg_mut();
    }
    u * v_t
}
