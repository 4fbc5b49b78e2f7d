use super::beta::inc_beta_pair;

/// `P(T > t)` for Student's t with `dof` degrees of freedom (`dof > 0`, may be fractional).
pub fn student_t_sf(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    let tail = 0.5 * abs_tail(t, dof);
    if t > 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// `P(|T| > |t|)`.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    abs_tail(t, dof)
}

/// `I_{dof/(dof+t²)}(dof/2, 1/2)`, the two-sided tail mass.
fn abs_tail(t: f64, dof: f64) -> f64 {
    let t2 = t * t;
    if t2.is_infinite() {
        return 0.0;
    }
    let denom = dof + t2;
    inc_beta_pair(0.5 * dof, 0.5, dof / denom, t2 / denom)
}
