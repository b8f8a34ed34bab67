//! Locale-independent rendering of run results.

use crate::tensor::DenseTensor;

/// `%g`-style rendering with `precision` significant digits: fixed notation
/// for moderate exponents, scientific otherwise, trailing zeros removed.
/// Negative zero prints as `0`.
pub fn float(v: f64, precision: usize) -> String {
    let p = precision.max(1);
    if v == 0.0 {
        return "0".into();
    }
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    let sci = format!("{:.*e}", p - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Nested-brace literal form, e.g. `{{1, 2}, {3, 4}}`.
pub fn tensor(t: &DenseTensor, precision: usize) -> String {
    braces(t, &|v| float(v, precision))
}

/// Apollo source for `t` that lexes back to exactly the same values.
pub fn tensor_source(t: &DenseTensor) -> String {
    braces(t, &|v| format!("{v}"))
}

fn braces(t: &DenseTensor, fmt: &dyn Fn(f64) -> String) -> String {
    fn nest(dims: &[usize], data: &[f64], fmt: &dyn Fn(f64) -> String, out: &mut String) {
        out.push('{');
        match dims {
            [] | [_] => {
                for (i, v) in data.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    out.push_str(&fmt(*v));
                }
            }
            [n, rest @ ..] => {
                for (i, chunk) in data.chunks(data.len() / n).enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    nest(rest, chunk, fmt, out);
                }
            }
        }
        out.push('}');
    }
    let mut out = String::new();
    nest(t.dims(), t.data(), fmt, &mut out);
    out
}
