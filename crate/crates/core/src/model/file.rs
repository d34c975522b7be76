//! Plain-text system definition format.
//!
//! A file is a sequence of sections:
//!
//! ```text
//! [dimensions]
//! n_w = 3
//! n_mu = 2
//! lower = 0.5 0.5
//! upper = 2.0 2.0
//!
//! [matrix_term 0]
//! poly = 1.0 : 0 0 ; -2.0 : 1 0
//! format = coo
//! 0 0 2.0
//! 1 1 2.0
//!
//! [rhs_term 0]
//! poly = 1.0 : 0 0
//! format = vec
//! 1.0
//! 0.0
//! 1.0
//! ```
//!
//! `poly` lists monomials as `coef : e1 e2 ... e_nmu`, separated by `;`.
//! Matrix payloads are either `coo` lines `row col value` (0-based, omitted
//! entries zero) or `dense` rows; vector payloads are `vec` (one value per
//! line) or `coo` lines `row value`. Values are written with 17 significant
//! digits so a save/load cycle reproduces the operators bit-for-bit.
//! Terms with constant coefficient polynomials are folded into the base
//! operator on load.

use super::{AffineParametricSystem, ModelError, Monomial, ParamBounds, Polynomial};
use nalgebra::{DMatrix, DVector};
use std::path::Path;

pub fn load_system(path: &Path) -> Result<AffineParametricSystem, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::File(format!("{}: {e}", path.display())))?;
    parse_system(&text)
}

pub fn save_system(sys: &AffineParametricSystem, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, render_system(sys))
        .map_err(|e| ModelError::File(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Payload {
    Coo,
    Dense,
    Vec,
}

struct RawTerm {
    is_matrix: bool,
    index: usize,
    poly: Option<Polynomial>,
    payload: Option<Payload>,
    lines: Vec<(usize, String)>,
}

struct Dimensions {
    n_w: usize,
    n_mu: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

pub fn parse_system(text: &str) -> Result<AffineParametricSystem, ModelError> {
    let mut dims: Option<Dimensions> = None;
    let mut in_dimensions = false;
    let mut pending: (usize, usize, Vec<f64>, Vec<f64>) = (0, 0, vec![], vec![]);
    let mut terms: Vec<RawTerm> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| err(lineno, "unterminated section header"))?
                .trim();
            if in_dimensions {
                dims = Some(finish_dimensions(&pending, lineno)?);
                in_dimensions = false;
            }
            if header == "dimensions" {
                if dims.is_some() {
                    return Err(err(lineno, "duplicate [dimensions] section"));
                }
                in_dimensions = true;
            } else if let Some(rest) = header.strip_prefix("matrix_term") {
                let index = parse_term_index(rest, lineno)?;
                terms.push(RawTerm { is_matrix: true, index, poly: None, payload: None, lines: vec![] });
            } else if let Some(rest) = header.strip_prefix("rhs_term") {
                let index = parse_term_index(rest, lineno)?;
                terms.push(RawTerm { is_matrix: false, index, poly: None, payload: None, lines: vec![] });
            } else {
                return Err(err(lineno, &format!("unknown section [{header}]")));
            }
            continue;
        }
        if in_dimensions {
            let (key, value) = split_kv(line, lineno)?;
            match key {
                "n_w" => pending.0 = parse_usize(value, lineno)?,
                "n_mu" => pending.1 = parse_usize(value, lineno)?,
                "lower" => pending.2 = parse_floats(value, lineno)?,
                "upper" => pending.3 = parse_floats(value, lineno)?,
                other => return Err(err(lineno, &format!("unknown dimensions key '{other}'"))),
            }
            continue;
        }
        let term = terms
            .last_mut()
            .ok_or_else(|| err(lineno, "content before any section header"))?;
        if let Some(value) = keyed(line, "poly") {
            let n_mu = dims
                .as_ref()
                .ok_or_else(|| err(lineno, "[dimensions] must precede term sections"))?
                .n_mu;
            term.poly = Some(parse_poly(value, n_mu, lineno)?);
        } else if let Some(value) = keyed(line, "format") {
            term.payload = Some(match value.trim() {
                "coo" => Payload::Coo,
                "dense" => Payload::Dense,
                "vec" => Payload::Vec,
                other => return Err(err(lineno, &format!("unknown payload format '{other}'"))),
            });
        } else {
            term.lines.push((lineno, line.to_string()));
        }
    }
    if in_dimensions {
        dims = Some(finish_dimensions(&pending, 0)?);
    }
    let dims = dims.ok_or_else(|| err(0, "missing [dimensions] section"))?;
    let bounds = ParamBounds::from_slices(&dims.lower, &dims.upper)?;

    let mut base_matrix = DMatrix::zeros(dims.n_w, dims.n_w);
    let mut base_rhs = DVector::zeros(dims.n_w);
    let mut matrix_terms = Vec::new();
    let mut rhs_terms = Vec::new();

    for term in terms {
        let poly = term
            .poly
            .clone()
            .ok_or_else(|| err(0, &format!("term {} is missing its poly line", term.index)))?;
        if term.is_matrix {
            let m = parse_matrix_payload(&term, dims.n_w)?;
            if poly.is_constant() {
                base_matrix += m * poly.constant_value();
            } else {
                matrix_terms.push((poly, m));
            }
        } else {
            let v = parse_vector_payload(&term, dims.n_w)?;
            if poly.is_constant() {
                base_rhs += v * poly.constant_value();
            } else {
                rhs_terms.push((poly, v));
            }
        }
    }
    AffineParametricSystem::new(bounds, base_matrix, matrix_terms, base_rhs, rhs_terms)
}

pub fn render_system(sys: &AffineParametricSystem) -> String {
    let mut out = String::new();
    out.push_str("# affine parametric linear system\n[dimensions]\n");
    out.push_str(&format!("n_w = {}\n", sys.n_w()));
    out.push_str(&format!("n_mu = {}\n", sys.n_mu()));
    out.push_str(&format!("lower = {}\n", join_floats(sys.bounds().lower().as_slice())));
    out.push_str(&format!("upper = {}\n", join_floats(sys.bounds().upper().as_slice())));

    let mut idx = 0;
    let constant_one = Polynomial::constant(sys.n_mu(), 1.0);
    if sys.base_matrix().iter().any(|&v| v != 0.0) {
        render_matrix_term(&mut out, idx, &constant_one, sys.base_matrix());
        idx += 1;
    }
    for (p, m) in sys.matrix_terms() {
        render_matrix_term(&mut out, idx, p, m);
        idx += 1;
    }
    let mut ridx = 0;
    if sys.base_rhs().iter().any(|&v| v != 0.0) {
        render_rhs_term(&mut out, ridx, &constant_one, sys.base_rhs());
        ridx += 1;
    }
    for (p, v) in sys.rhs_terms() {
        render_rhs_term(&mut out, ridx, p, v);
        ridx += 1;
    }
    out
}

fn render_matrix_term(out: &mut String, idx: usize, poly: &Polynomial, m: &DMatrix<f64>) {
    out.push_str(&format!("\n[matrix_term {idx}]\n"));
    out.push_str(&format!("poly = {}\n", render_poly(poly)));
    out.push_str("format = coo\n");
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != 0.0 {
                out.push_str(&format!("{i} {j} {}\n", fmt_float(m[(i, j)])));
            }
        }
    }
}

fn render_rhs_term(out: &mut String, idx: usize, poly: &Polynomial, v: &DVector<f64>) {
    out.push_str(&format!("\n[rhs_term {idx}]\n"));
    out.push_str(&format!("poly = {}\n", render_poly(poly)));
    out.push_str("format = vec\n");
    for i in 0..v.len() {
        out.push_str(&format!("{}\n", fmt_float(v[i])));
    }
}

fn render_poly(p: &Polynomial) -> String {
    p.monomials()
        .iter()
        .map(|m| {
            let exps = m
                .exponents
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            format!("{} : {exps}", fmt_float(m.coef))
        })
        .collect::<Vec<_>>()
        .join(" ; ")
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(" ")
}

fn err(lineno: usize, msg: &str) -> ModelError {
    if lineno == 0 {
        ModelError::File(msg.to_string())
    } else {
        ModelError::File(format!("line {lineno}: {msg}"))
    }
}

fn split_kv(line: &str, lineno: usize) -> Result<(&str, &str), ModelError> {
    line.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| err(lineno, "expected 'key = value'"))
}

fn keyed<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let (k, v) = line.split_once('=')?;
    if k.trim() == key {
        Some(v.trim())
    } else {
        None
    }
}

fn parse_term_index(rest: &str, lineno: usize) -> Result<usize, ModelError> {
    rest.trim()
        .parse()
        .map_err(|_| err(lineno, "term header needs an integer index"))
}

fn parse_usize(v: &str, lineno: usize) -> Result<usize, ModelError> {
    v.parse().map_err(|_| err(lineno, &format!("bad integer '{v}'")))
}

fn parse_f64(v: &str, lineno: usize) -> Result<f64, ModelError> {
    v.parse().map_err(|_| err(lineno, &format!("bad number '{v}'")))
}

fn parse_floats(v: &str, lineno: usize) -> Result<Vec<f64>, ModelError> {
    v.split_whitespace().map(|t| parse_f64(t, lineno)).collect()
}

fn parse_poly(value: &str, n_mu: usize, lineno: usize) -> Result<Polynomial, ModelError> {
    let mut monomials = Vec::new();
    for chunk in value.split(';') {
        let (coef, exps) = chunk
            .split_once(':')
            .ok_or_else(|| err(lineno, "monomial must look like 'coef : e1 e2 ...'"))?;
        let coef = parse_f64(coef.trim(), lineno)?;
        let exponents: Vec<u32> = exps
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(lineno, &format!("bad exponent '{t}'"))))
            .collect::<Result<_, _>>()?;
        if exponents.len() != n_mu {
            return Err(err(lineno, &format!("expected {n_mu} exponents, got {}", exponents.len())));
        }
        monomials.push(Monomial { coef, exponents });
    }
    Polynomial::new(n_mu, monomials)
}

fn finish_dimensions(
    pending: &(usize, usize, Vec<f64>, Vec<f64>),
    lineno: usize,
) -> Result<Dimensions, ModelError> {
    let (n_w, n_mu, lower, upper) = pending;
    if *n_w == 0 {
        return Err(err(lineno, "n_w must be positive"));
    }
    if *n_mu == 0 {
        return Err(err(lineno, "n_mu must be positive"));
    }
    if lower.len() != *n_mu || upper.len() != *n_mu {
        return Err(err(lineno, "lower/upper must list one bound per parameter"));
    }
    Ok(Dimensions { n_w: *n_w, n_mu: *n_mu, lower: lower.clone(), upper: upper.clone() })
}

fn parse_matrix_payload(term: &RawTerm, n_w: usize) -> Result<DMatrix<f64>, ModelError> {
    let payload = term
        .payload
        .ok_or_else(|| err(0, &format!("matrix_term {} is missing its format line", term.index)))?;
    match payload {
        Payload::Coo => {
            let mut m = DMatrix::zeros(n_w, n_w);
            for (lineno, line) in &term.lines {
                let mut it = line.split_whitespace();
                let (r, c, v) = match (it.next(), it.next(), it.next(), it.next()) {
                    (Some(r), Some(c), Some(v), None) => (r, c, v),
                    _ => return Err(err(*lineno, "coo matrix line must be 'row col value'")),
                };
                let r = parse_usize(r, *lineno)?;
                let c = parse_usize(c, *lineno)?;
                if r >= n_w || c >= n_w {
                    return Err(err(*lineno, &format!("index ({r}, {c}) outside {n_w}x{n_w}")));
                }
                m[(r, c)] = parse_f64(v, *lineno)?;
            }
            Ok(m)
        }
        Payload::Dense => {
            if term.lines.len() != n_w {
                return Err(err(0, &format!("dense matrix_term {} needs {n_w} rows", term.index)));
            }
            let mut m = DMatrix::zeros(n_w, n_w);
            for (i, (lineno, line)) in term.lines.iter().enumerate() {
                let row = parse_floats(line, *lineno)?;
                if row.len() != n_w {
                    return Err(err(*lineno, &format!("dense row needs {n_w} values")));
                }
                for (j, v) in row.into_iter().enumerate() {
                    m[(i, j)] = v;
                }
            }
            Ok(m)
        }
        Payload::Vec => Err(err(0, &format!("matrix_term {} cannot use 'vec' format", term.index))),
    }
}

fn parse_vector_payload(term: &RawTerm, n_w: usize) -> Result<DVector<f64>, ModelError> {
    let payload = term
        .payload
        .ok_or_else(|| err(0, &format!("rhs_term {} is missing its format line", term.index)))?;
    match payload {
        Payload::Vec => {
            if term.lines.len() != n_w {
                return Err(err(0, &format!("vec rhs_term {} needs {n_w} entries", term.index)));
            }
            let mut v = DVector::zeros(n_w);
            for (i, (lineno, line)) in term.lines.iter().enumerate() {
                v[i] = parse_f64(line, *lineno)?;
            }
            Ok(v)
        }
        Payload::Coo => {
            let mut v = DVector::zeros(n_w);
            for (lineno, line) in &term.lines {
                let mut it = line.split_whitespace();
                let (r, val) = match (it.next(), it.next(), it.next()) {
                    (Some(r), Some(val), None) => (r, val),
                    _ => return Err(err(*lineno, "coo vector line must be 'row value'")),
                };
                let r = parse_usize(r, *lineno)?;
                if r >= n_w {
                    return Err(err(*lineno, &format!("index {r} outside length {n_w}")));
                }
                v[r] = parse_f64(val, *lineno)?;
            }
            Ok(v)
        }
        Payload::Dense => Err(err(0, &format!("rhs_term {} cannot use 'dense' format", term.index))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# sample
[dimensions]
n_w = 3
n_mu = 2
lower = 0.5 0.5
upper = 2.0 2.0

[matrix_term 0]
poly = 1.0 : 0 0
format = dense
2.0 -1.0 0.0
-1.0 2.0 -1.0
0.0 -1.0 2.0

[matrix_term 1]
poly = 1.0 : 1 0 ; 0.5 : 0 2
format = coo
0 0 1.0
2 2 -0.25

[rhs_term 0]
poly = 2.0 : 0 0
format = vec
1.0
0.0
-1.0

[rhs_term 1]
poly = 1.0 : 0 1
format = coo
1 3.5
";

    #[test]
    fn parses_and_assembles_sample() {
        let sys = parse_system(SAMPLE).unwrap();
        assert_eq!(sys.n_w(), 3);
        assert_eq!(sys.n_mu(), 2);
        // Constant terms are folded into the base operators.
        assert_eq!(sys.matrix_terms().len(), 1);
        assert_eq!(sys.rhs_terms().len(), 1);
        assert_eq!(sys.base_rhs()[0], 2.0);

        let mu = nalgebra::DVector::from_row_slice(&[1.5, 0.8]);
        let (a, b) = sys.assemble(&mu).unwrap();
        let p = 1.5 + 0.5 * 0.8 * 0.8;
        assert!((a[(0, 0)] - (2.0 + p)).abs() < 1e-15);
        assert!((a[(2, 2)] - (2.0 - 0.25 * p)).abs() < 1e-15);
        assert!((b[1] - (0.0 + 0.8 * 3.5)).abs() < 1e-15);
    }

    #[test]
    fn save_load_roundtrip_preserves_operators() {
        let sys = parse_system(SAMPLE).unwrap();
        let text = render_system(&sys);
        let back = parse_system(&text).unwrap();
        let mu = nalgebra::DVector::from_row_slice(&[1.25, 1.75]);
        let (a1, b1) = sys.assemble(&mu).unwrap();
        let (a2, b2) = back.assemble(&mu).unwrap();
        assert_eq!(a1, a2, "operators must survive a text roundtrip bit-for-bit");
        assert_eq!(b1, b2);
    }

    #[test]
    fn reports_line_numbers_on_bad_input() {
        let bad = "[dimensions]\nn_w = 2\nn_mu = 1\nlower = 0\nupper = 1\n[matrix_term 0]\npoly = 1.0 : 0\nformat = coo\n5 0 1.0\n";
        let e = parse_system(bad).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 9"), "got: {msg}");
    }

    #[test]
    fn rejects_degree_above_cap_in_file() {
        let bad = "[dimensions]\nn_w = 1\nn_mu = 1\nlower = 0\nupper = 1\n[matrix_term 0]\npoly = 1.0 : 4\nformat = coo\n0 0 1.0\n";
        let e = parse_system(bad).unwrap_err();
        assert!(matches!(e, ModelError::DegreeTooHigh { degree: 4, .. }));
    }

    #[test]
    fn rejects_unknown_section() {
        let bad = "[dimensions]\nn_w = 1\nn_mu = 1\nlower = 0\nupper = 1\n[mystery]\n";
        assert!(parse_system(bad).is_err());
    }
}
