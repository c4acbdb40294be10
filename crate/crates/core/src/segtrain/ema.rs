//! Exponential moving average of parameters.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `teacher ← α·teacher + (1−α)·student`, element-wise.
pub fn ema_update<T: Scalar>(teacher: &mut [T], student: &[T], alpha: T) -> Result<()> {
    check(teacher.len(), student.len())?;
    let beta = T::one() - alpha;
    for (t, &s) in teacher.iter_mut().zip(student) {
        *t = alpha * *t + beta * s;
    }
    Ok(())
}

/// `teacher ← α·previous_student + (1−α)·student`.
pub fn ema_update_from_previous<T: Scalar>(
    teacher: &mut [T],
    previous_student: &[T],
    student: &[T],
    alpha: T,
) -> Result<()> {
    check(teacher.len(), student.len())?;
    check(previous_student.len(), student.len())?;
    let beta = T::one() - alpha;
    for ((t, &p), &s) in teacher.iter_mut().zip(previous_student).zip(student) {
        *t = alpha * p + beta * s;
    }
    Ok(())
}

fn check(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!(
            "teacher has {a} parameters, student has {b}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_zero_copies_student() {
        let mut t = vec![3.0, -1.0];
        ema_update(&mut t, &[0.5, 0.25], 0.0).unwrap();
        assert_eq!(t, vec![0.5, 0.25]);
    }

    #[test]
    fn half_alpha_midpoint() {
        let mut t = vec![0.0f32];
        ema_update(&mut t, &[1.0], 0.5).unwrap();
        assert_eq!(t, vec![0.5]);
    }

    #[test]
    fn shape_mismatch() {
        let mut t = vec![0.0; 3];
        assert!(matches!(ema_update(&mut t, &[1.0; 2], 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn geometric_convergence_closed_form() {
        let student = [1.5, -2.0, 0.25];
        let init = [0.0, 3.0, -7.0];
        let alpha: f64 = 0.9;
        let mut teacher = init;
        for _ in 0..10 {
            ema_update(&mut teacher, &student, alpha).unwrap();
        }
        for i in 0..3 {
            let expected = alpha.powi(10) * (init[i] - student[i]);
            let got = teacher[i] - student[i];
            assert!(((got - expected) / expected).abs() < 1e-12);
        }
    }

    #[test]
    fn previous_student_variant() {
        let mut t = vec![100.0];
        ema_update_from_previous(&mut t, &[2.0], &[4.0], 0.5).unwrap();
        assert_eq!(t, vec![3.0]);
    }
}
