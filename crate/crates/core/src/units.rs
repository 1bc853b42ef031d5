//! Power units. Everything inside the crate is in watts; dBm only appears
//! where values are read from flags or JSON (`"50dBm"`, `"-30 dBm"`, `"2.5W"`
//! or a bare number of watts).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::ConfigError;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Watts(pub f64);

impl fmt::Display for Watts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} W", self.0)
    }
}

impl FromStr for Watts {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let lower = t.to_ascii_lowercase();
        let bad = || ConfigError::Invalid(format!("cannot parse power '{s}'"));
        if let Some(num) = lower.strip_suffix("dbm") {
            let v: f64 = num.trim().parse().map_err(|_| bad())?;
            return Ok(Watts(dbm_to_watts(v)));
        }
        let num = lower.strip_suffix('w').unwrap_or(&lower);
        num.trim().parse().map(Watts).map_err(|_| bad())
    }
}

impl<'de> Deserialize<'de> for Watts {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Watts(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        assert!((dbm_to_watts(50.0) - 100.0).abs() < 1e-12);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(-30.0) - 1e-6).abs() < 1e-21);
        assert!((watts_to_dbm(100.0) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn parse_forms() {
        assert!(("50dBm".parse::<Watts>().unwrap().0 - 100.0).abs() < 1e-12);
        assert!(("-30 dBm".parse::<Watts>().unwrap().0 - 1e-6).abs() < 1e-20);
        assert_eq!("2.5W".parse::<Watts>().unwrap(), Watts(2.5));
        assert_eq!("7".parse::<Watts>().unwrap(), Watts(7.0));
        assert!("fifty".parse::<Watts>().is_err());
        let w: Watts = serde_json::from_str("\"40dBm\"").unwrap();
        assert!((w.0 - 10.0).abs() < 1e-12);
        let w: Watts = serde_json::from_str("0.5").unwrap();
        assert_eq!(w, Watts(0.5));
    }
}
