use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intra-day prices are day-ahead plus a 20% fee.
pub const INTRADAY_FEE: f64 = 1.2;
/// Default imbalance price as a multiple of day-ahead.
pub const IMBALANCE_FACTOR: f64 = 10.0;

/// Columns of the price file, in the order they are written.
pub const PRICE_COLUMNS: [&str; 9] = [
    "hour", "r_plus", "r_minus", "e_plus", "e_minus", "da", "id_plus", "id_minus", "imbalance",
];

/// Hourly market prices. Reserve prices are per kW and hour, energy prices per kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub r_plus: Vec<f64>,
    pub r_minus: Vec<f64>,
    pub e_plus: Vec<f64>,
    pub e_minus: Vec<f64>,
    pub da: Vec<f64>,
    pub id_plus: Vec<f64>,
    pub id_minus: Vec<f64>,
    pub imbalance: Vec<f64>,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.da.len()
    }

    pub fn is_empty(&self) -> bool {
        self.da.is_empty()
    }

    fn columns(&self) -> [(&'static str, &Vec<f64>); 8] {
        [
            ("r_plus", &self.r_plus),
            ("r_minus", &self.r_minus),
            ("e_plus", &self.e_plus),
            ("e_minus", &self.e_minus),
            ("da", &self.da),
            ("id_plus", &self.id_plus),
            ("id_minus", &self.id_minus),
            ("imbalance", &self.imbalance),
        ]
    }

    /// Checks equal lengths, finiteness, nonnegative intra-day prices and length `>= horizon`.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let n = self.len();
        for (name, col) in self.columns() {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    what: format!("price column {name}"),
                    expected: n,
                    got: col.len(),
                });
            }
            if let Some(k) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid("prices", format!("{name} at hour {k} is not finite")));
            }
        }
        if self.id_plus.iter().chain(&self.id_minus).any(|v| *v < 0.0) {
            return Err(Error::invalid("prices", "intra-day prices must be nonnegative"));
        }
        if n < horizon {
            return Err(Error::LengthMismatch {
                what: "price series".into(),
                expected: horizon,
                got: n,
            });
        }
        Ok(())
    }

    /// Copy with both intra-day prices multiplied by `factor`.
    pub fn scale_intraday(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.id_plus.iter_mut().for_each(|v| *v *= factor);
        out.id_minus.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Parses the price CSV. The header is required; column order is free.
    ///
    /// Numbers must use a dot as decimal separator. Reported rows are file line numbers.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let mut index = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            index.insert(h.to_string(), i);
        }
        for col in PRICE_COLUMNS {
            if !index.contains_key(col) {
                return Err(Error::Schema { column: col.into() });
            }
        }
        let mut rows: Vec<(u32, [f64; 8])> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let row = e.position().map_or(0, |p| p.line() as usize);
                Error::Parse {
                    row,
                    column: String::new(),
                    message: e.to_string(),
                }
            })?;
            let row = record.position().map_or(0, |p| p.line() as usize);
            let cell = |col: &str| record.get(index[col]).unwrap_or("");
            let hour: u32 = cell("hour").parse().map_err(|_| Error::Parse {
                row,
                column: "hour".into(),
                message: format!("expected a nonnegative integer, got {:?}", cell("hour")),
            })?;
            let mut values = [0.0; 8];
            for (slot, col) in values.iter_mut().zip(&PRICE_COLUMNS[1..]) {
                let raw = cell(col);
                *slot = raw.parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    column: col.to_string(),
                    message: format!("expected a dot-decimal number, got {raw:?}"),
                })?;
            }
            rows.push((hour, values));
        }
        rows.sort_by_key(|r| r.0);
        for (expected, (hour, _)) in rows.iter().enumerate() {
            if *hour as usize != expected {
                return Err(Error::Parse {
                    row: 0,
                    column: "hour".into(),
                    message: format!("hours must run 0..{} without gaps or repeats; found {hour} at position {expected}", rows.len()),
                });
            }
        }
        let col = |i: usize| rows.iter().map(|r| r.1[i]).collect::<Vec<f64>>();
        let prices = Self {
            r_plus: col(0),
            r_minus: col(1),
            e_plus: col(2),
            e_minus: col(3),
            da: col(4),
            id_plus: col(5),
            id_minus: col(6),
            imbalance: col(7),
        };
        prices.validate(0)?;
        Ok(prices)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(PRICE_COLUMNS)?;
        for k in 0..self.len() {
            let mut rec = vec![k.to_string()];
            rec.extend(self.columns().iter().map(|(_, c)| crate::envelope::fmt_num(c[k])));
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Reads a price file; see [`PriceSeries::from_csv_str`].
pub fn load_prices(path: &Path) -> Result<PriceSeries> {
    PriceSeries::from_csv_str(&std::fs::read_to_string(path)?)
}

/// Synthetic hourly prices for `n` hours starting at midnight.
///
/// Upward reserve is dear in the morning (07-09) and evening (17-20) peaks,
/// downward reserve at night (00-05). Day-ahead follows the same peaks.
pub fn synth_prices(seed: u64, n: usize) -> PriceSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x009e_1ce5);
    let level = rng.random_range(0.85..1.15);
    let mut p = PriceSeries {
        r_plus: Vec::with_capacity(n),
        r_minus: Vec::with_capacity(n),
        e_plus: Vec::with_capacity(n),
        e_minus: Vec::with_capacity(n),
        da: Vec::with_capacity(n),
        id_plus: Vec::with_capacity(n),
        id_minus: Vec::with_capacity(n),
        imbalance: Vec::with_capacity(n),
    };
    for k in 0..n {
        let hour = k % 24;
        let peak = matches!(hour, 7..=9 | 17..=20);
        let night = hour <= 5;
        let da = level * (if peak { 0.14 } else if night { 0.07 } else { 0.10 }) + rng.random_range(-0.01..0.01);
        let r_plus = level * (if peak { 0.030 } else { 0.012 }) + rng.random_range(0.0..0.003);
        let r_minus = level * (if night { 0.025 } else { 0.010 }) + rng.random_range(0.0..0.003);
        p.da.push(da);
        p.r_plus.push(r_plus);
        p.r_minus.push(r_minus);
        p.e_plus.push(0.8 * da + rng.random_range(0.0..0.02));
        p.e_minus.push(0.4 * da + rng.random_range(0.0..0.02));
        p.id_plus.push(INTRADAY_FEE * da);
        p.id_minus.push(INTRADAY_FEE * da);
        p.imbalance.push(IMBALANCE_FACTOR * da);
    }
    p
}
