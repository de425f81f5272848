//! Hamiltonians are written as real linear combinations of named Pauli
//! strings, e.g. `0.5*omega X0 + 0.25 Z0Z1`, with `omega` (or `w`) resolved
//! from the `physics.omega` key. Terms separate on `+`/`-`; factors within a
//! term multiply.

use num_complex::Complex64;
use qarrow::algebra::{pauli_on_qubit, ComplexMatrix, Pauli};

fn parse_pauli_string(token: &str, n_qubits: usize) -> Result<ComplexMatrix, String> {
    if token == "I" {
        return Ok(ComplexMatrix::identity(1 << n_qubits));
    }
    let chars: Vec<char> = token.chars().collect();
    let mut result = ComplexMatrix::identity(1 << n_qubits);
    let mut i = 0;
    let mut any = false;
    while i < chars.len() {
        let which = match chars[i] {
            'X' => Pauli::X,
            'Y' => Pauli::Y,
            'Z' => Pauli::Z,
            other => return Err(format!("unexpected `{other}` in Pauli string `{token}`")),
        };
        i += 1;
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(format!(
                "missing qubit index after `{}` in `{token}`",
                chars[start - 1]
            ));
        }
        let index: usize = chars[start..i].iter().collect::<String>().parse().unwrap();
        let factor = pauli_on_qubit(which, index, n_qubits).map_err(|e| e.to_string())?;
        result = result.mul(factor.mat()).map_err(|e| e.to_string())?;
        any = true;
    }
    if !any {
        return Err(format!("empty Pauli string `{token}`"));
    }
    Ok(result)
}

/// Parses one multiplicative term, e.g. `0.5*omega X0` or `-1.25 Z0`.
fn parse_term(term: &str, omega: f64, n_qubits: usize) -> Result<ComplexMatrix, String> {
    let mut coeff = 1.0f64;
    let mut matrix: Option<ComplexMatrix> = None;
    for factor in term.split(|c: char| c == '*' || c.is_whitespace()) {
        let factor = factor.trim();
        if factor.is_empty() {
            continue;
        }
        if factor == "omega" || factor == "w" {
            coeff *= omega;
        } else if factor.starts_with(|c: char| c.is_ascii_digit() || c == '.' || c == '-') {
            let v: f64 = factor
                .parse()
                .map_err(|_| format!("cannot parse numeric factor `{factor}`"))?;
            coeff *= v;
        } else {
            let p = parse_pauli_string(factor, n_qubits)?;
            matrix = Some(match matrix {
                None => p,
                Some(m) => m.mul(&p).map_err(|e| e.to_string())?,
            });
        }
    }
    let base = matrix.unwrap_or_else(|| ComplexMatrix::identity(1 << n_qubits));
    Ok(base.scale(Complex64::new(coeff, 0.0)))
}

/// Parses a full Hamiltonian expression. The result must be Hermitian (the
/// trajectory config checks that invariant).
pub fn parse_hamiltonian(spec: &str, omega: f64, n_qubits: usize) -> Result<ComplexMatrix, String> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "0" {
        return Ok(ComplexMatrix::zeros(1 << n_qubits));
    }
    let mut total = ComplexMatrix::zeros(1 << n_qubits);
    // Split into signed terms on top-level + and - (a leading sign binds to
    // the first term).
    let mut terms: Vec<(f64, String)> = Vec::new();
    let mut current = String::new();
    let mut sign = 1.0;
    let mut chars = spec.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '+' => {
                if !current.trim().is_empty() {
                    terms.push((sign, current.clone()));
                }
                current.clear();
                sign = 1.0;
            }
            '-' => {
                // Distinguish a separator from a negative numeric literal:
                // a `-` directly following a digit or `)` separates.
                if current.trim().is_empty() {
                    current.push(c); // negative literal at term start
                } else {
                    terms.push((sign, current.clone()));
                    current.clear();
                    sign = -1.0;
                }
            }
            _ => current.push(c),
        }
    }
    if !current.trim().is_empty() {
        terms.push((sign, current));
    }
    if terms.is_empty() {
        return Err("no terms in Hamiltonian expression".to_string());
    }
    for (s, term) in terms {
        let m = parse_term(&term, omega, n_qubits)?;
        total.add_scaled(&m, Complex64::new(s, 0.0));
        let _ = &total;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qarrow::algebra::{sigma_x, sigma_z};

    #[test]
    fn rabi_hamiltonian() {
        let h = parse_hamiltonian("0.5*omega X0", 3.0, 1).unwrap();
        assert!(h.max_abs_diff(&sigma_x().scale_re(1.5)) < 1e-15);
    }

    #[test]
    fn sum_and_difference() {
        let h = parse_hamiltonian("0.5 Z0 - 0.25 X0", 1.0, 1).unwrap();
        let mut want = sigma_z().scale_re(0.5);
        want.add_scaled(&sigma_x(), Complex64::new(-0.25, 0.0));
        assert!(h.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn tensor_string() {
        let h = parse_hamiltonian("1.0 Z0Z1", 1.0, 2).unwrap();
        let want = qarrow::algebra::pauli_on_qubit(Pauli::Z, 0, 2)
            .unwrap()
            .mat()
            .mul(
                qarrow::algebra::pauli_on_qubit(Pauli::Z, 1, 2)
                    .unwrap()
                    .mat(),
            )
            .unwrap();
        assert!(h.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn zero_and_errors() {
        assert!(parse_hamiltonian("0", 1.0, 1).unwrap().max_abs() == 0.0);
        assert!(parse_hamiltonian("0.5 Q0", 1.0, 1).is_err());
        assert!(parse_hamiltonian("0.5 X", 1.0, 1).is_err());
        assert!(parse_hamiltonian("0.5 X3", 1.0, 1).is_err()); // index range
    }

    #[test]
    fn negative_leading_coefficient() {
        let h = parse_hamiltonian("-0.5 Z0", 1.0, 1).unwrap();
        assert!(h.max_abs_diff(&sigma_z().scale_re(-0.5)) < 1e-15);
    }
}
