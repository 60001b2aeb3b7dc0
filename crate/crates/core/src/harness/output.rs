//! Result rows and CSV output.

use std::fmt::Write as _;
use std::path::Path;

use super::run::HarnessError;

pub const CSV_HEADER: &str =
    "algorithm,h,L_sq,iters,coarse_iters_avg,e_u_l2,e_p_l2,e_n_l2,e_u_h1,e_p_h1,e_n_h1,converged,runtime_s";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub algorithm: String,
    pub h_label: String,
    pub l_sq: f64,
    /// Outer iterations; the iteration cap for runs that did not converge.
    pub iterations: usize,
    pub coarse_iters_avg: Option<usize>,
    /// `(L²: φ, p, n; H¹: φ, p, n)`, absent when the run did not converge.
    pub errors: Option<[f64; 6]>,
    pub converged: bool,
    pub runtime_s: f64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},",
            self.algorithm,
            self.h_label,
            format_g(self.l_sq),
            self.iterations
        )
        .unwrap();
        match self.coarse_iters_avg {
            Some(c) => write!(s, "{c},").unwrap(),
            None => s.push_str("NA,"),
        }
        for k in 0..6 {
            match &self.errors {
                Some(e) => s.push_str(&format_g(e[k])),
                None => s.push_str("NA"),
            }
            s.push(',');
        }
        write!(s, "{},{}", self.converged, format_g(self.runtime_s)).unwrap();
        s
    }
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, to_csv(rows)).map_err(|source| HarnessError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// C `%g` with six significant digits.
pub fn format_g(x: f64) -> String {
    const P: i32 = 6;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // exponent after rounding to P digits
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_g_matches_printf() {
        let cases = [
            (1.0, "1"),
            (2.6, "2.6"),
            (6.04e-3, "0.00604"),
            (2.3212345678e-2, "0.0232123"),
            (1.0e-5, "1e-05"),
            (123456.7, "123457"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (-0.5, "-0.5"),
            (999999.5, "1e+06"),
            (9.999995e-5, "0.0001"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g(x), want, "{x}");
        }
    }

    #[test]
    fn empty_rows_give_header_only() {
        assert_eq!(to_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn row_follows_header_order() {
        let row = ResultRow {
            algorithm: "gfas".into(),
            h_label: "1/16(1/8)".into(),
            l_sq: 1.0,
            iterations: 3,
            coarse_iters_avg: Some(7),
            errors: Some([1e-3, 2e-2, 3e-2, 4e-2, 0.5, 0.6]),
            converged: true,
            runtime_s: 0.25,
        };
        let csv = to_csv(&[row]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[1],
            "gfas,1/16(1/8),1,3,7,0.001,0.02,0.03,0.04,0.5,0.6,true,0.25"
        );
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }

    #[test]
    fn diverged_row_marks_errors_unavailable() {
        let row = ResultRow {
            algorithm: "gummel".into(),
            h_label: "1/16".into(),
            l_sq: 2.8,
            iterations: 1000,
            coarse_iters_avg: None,
            errors: None,
            converged: false,
            runtime_s: 1.0,
        };
        assert_eq!(
            row.to_csv_line(),
            "gummel,1/16,2.8,1000,NA,NA,NA,NA,NA,NA,NA,false,1"
        );
    }
}
