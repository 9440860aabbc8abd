//! Parsing of numeric lists and `lo:hi:step` ranges.

use std::str::FromStr;

/// Values from `a,b,c` or an inclusive range `lo:hi:step`.
pub fn parse_values<T>(s: &str) -> Result<Vec<T>, String>
where
    T: FromStr + Copy,
{
    let s = s.trim();
    if s.is_empty() {
        return Err("empty list".into());
    }
    s.split(',')
        .map(|item| {
            item.trim()
                .parse::<T>()
                .map_err(|_| format!("cannot parse {item:?}"))
        })
        .collect()
}

/// `lo:hi:step` (inclusive, tolerant of rounding) or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [_] => parse_values(s),
        [lo, hi, step] => {
            let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("cannot parse {t:?}"));
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(format!("bad range {s:?}: need lo <= hi and step > 0"));
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            if count > 1_000_000 {
                return Err(format!("range {s:?} has too many points"));
            }
            // round to the step's decimal precision so 0.40 + 3*0.002 prints as 0.406
            let digits = decimals(step).max(decimals(lo));
            let scale = 10f64.powi(digits as i32);
            Ok((0..count)
                .map(|i| ((lo + i as f64 * step) * scale).round() / scale)
                .collect())
        }
        _ => Err(format!("expected a list or lo:hi:step, got {s:?}")),
    }
}

fn decimals(x: f64) -> usize {
    let s = format!("{x}");
    s.split_once('.').map_or(0, |(_, frac)| frac.len()).min(15)
}
