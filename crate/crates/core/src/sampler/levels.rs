use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::seed::derive_seed;
use crate::{Error, Result};

macro_rules! level {
    ($name:ident, $prefix:literal, $count:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(u8);

        impl $name {
            pub const COUNT: u8 = $count;

            pub fn new(index: u8) -> Result<Self> {
                if index < $count {
                    Ok($name(index))
                } else {
                    Err(Error::InvalidParameter(format!("{}-{} is not a level", $prefix, index)))
                }
            }

            pub fn index(self) -> u8 {
                self.0
            }

            pub fn is_control(self) -> bool {
                self.0 == 0
            }

            pub fn all() -> Vec<Self> {
                (0..$count).map($name).collect()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}-{}", $prefix, self.0)
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let digits = s.strip_prefix(concat!($prefix, "-")).unwrap_or(s);
                let i: u8 = digits
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad {} level '{}'", $prefix, s)))?;
                $name::new(i)
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

level!(PdLevel, "pd", 5);
level!(RfLevel, "rf", 6);
level!(NcLevel, "nc", 3);
level!(FiLevel, "fi", 4);

impl PdLevel {
    /// Bin for the benchmark's mean difficulty: `(low, high, low_inclusive)`;
    /// the upper end is always open.
    pub fn bin(self) -> (f64, f64, bool) {
        match self.0 {
            0 => (0.0, 1.0, false),
            1 => (0.0, 1.0 / 6.0, false),
            2 => (1.0 / 6.0, 1.0 / 3.0, true),
            3 => (1.0 / 3.0, 0.5, true),
            _ => (0.5, 1.0, true),
        }
    }

    pub fn contains(self, mean: f64) -> bool {
        let (lo, hi, closed) = self.bin();
        mean < hi && (mean > lo || (closed && mean == lo))
    }
}

impl RfLevel {
    /// Target anomaly fraction, `None` for the control.
    pub fn rate(self) -> Option<f64> {
        [None, Some(0.001), Some(0.005), Some(0.01), Some(0.05), Some(0.1)][self.0 as usize]
    }
}

impl NcLevel {
    /// Required sign of the clusteredness, `None` for the control.
    pub fn sign(self) -> Option<f64> {
        [None, Some(-1.0), Some(1.0)][self.0 as usize]
    }
}

impl FiLevel {
    /// Target ratio of mean pairwise distance after/before augmentation.
    pub fn alpha(self) -> f64 {
        [1.0, 1.2, 1.5, 2.0][self.0 as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub motherset: String,
    pub pd: PdLevel,
    pub rf: RfLevel,
    pub nc: NcLevel,
    pub fi: FiLevel,
    pub replicate: u32,
    pub seed: u64,
}

impl BenchmarkSpec {
    /// File-name-safe identifier, unique within a corpus.
    pub fn id(&self) -> String {
        format!(
            "{}_{}_{}_{}_{}_r{}",
            self.motherset, self.pd, self.rf, self.nc, self.fi, self.replicate
        )
    }
}

/// The levels requested along each dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    pub pd: Vec<PdLevel>,
    pub rf: Vec<RfLevel>,
    pub nc: Vec<NcLevel>,
    pub fi: Vec<FiLevel>,
}

impl Default for LevelGrid {
    fn default() -> Self {
        LevelGrid {
            pd: PdLevel::all(),
            rf: RfLevel::all(),
            nc: NcLevel::all(),
            fi: FiLevel::all(),
        }
    }
}

fn parse_list<T: FromStr<Err = Error>>(values: &str) -> Result<Vec<T>> {
    values.split(',').map(|v| v.trim().parse()).collect()
}

impl LevelGrid {
    pub fn len(&self) -> usize {
        self.pd.len() * self.rf.len() * self.nc.len() * self.fi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Restricts the full grid by `dim=level[,level...]` terms, e.g.
    /// `["rf=rf-4", "pd=pd-0,pd-1"]`; unmentioned dimensions keep all levels.
    pub fn parse<S: AsRef<str>>(terms: &[S]) -> Result<Self> {
        let mut grid = LevelGrid::default();
        for term in terms {
            let term = term.as_ref();
            let (dim, values) = term
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("level term '{term}' is not dim=levels")))?;
            match dim.trim() {
                "pd" => grid.pd = parse_list(values)?,
                "rf" => grid.rf = parse_list(values)?,
                "nc" => grid.nc = parse_list(values)?,
                "fi" => grid.fi = parse_list(values)?,
                other => return Err(Error::Parse(format!("unknown dimension '{other}'"))),
            }
        }
        Ok(grid)
    }
}

/// Cartesian product of the grid and replicate indices `1..=replicates`.
pub fn enumerate_specs(motherset: &str, grid: &LevelGrid, replicates: u32, master_seed: u64) -> Vec<BenchmarkSpec> {
    let mut out = Vec::with_capacity(grid.len() * replicates as usize);
    for &pd in &grid.pd {
        for &rf in &grid.rf {
            for &nc in &grid.nc {
                for &fi in &grid.fi {
                    for replicate in 1..=replicates {
                        let seed = derive_seed(
                            master_seed,
                            &[
                                "benchmark",
                                motherset,
                                &pd.to_string(),
                                &rf.to_string(),
                                &nc.to_string(),
                                &fi.to_string(),
                                &replicate.to_string(),
                            ],
                        );
                        out.push(BenchmarkSpec {
                            motherset: motherset.to_string(),
                            pd,
                            rf,
                            nc,
                            fi,
                            replicate,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_size() {
        assert_eq!(enumerate_specs("m", &LevelGrid::default(), 5, 1).len(), 1800);
        let one = LevelGrid::parse(&["pd=pd-0", "rf=rf-4", "nc=nc-0", "fi=fi-0"]).unwrap();
        assert_eq!(enumerate_specs("m", &one, 1, 1).len(), 1);
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = enumerate_specs("m", &LevelGrid::default(), 2, 7);
        let b = enumerate_specs("m", &LevelGrid::default(), 2, 7);
        assert_eq!(a, b);
        let mut seeds: Vec<u64> = a.iter().map(|s| s.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), a.len());
    }

    #[test]
    fn bins() {
        let pd1 = PdLevel::new(1).unwrap();
        assert!(pd1.contains(0.1) && !pd1.contains(0.0) && !pd1.contains(1.0 / 6.0));
        let pd2 = PdLevel::new(2).unwrap();
        assert!(pd2.contains(1.0 / 6.0) && !pd2.contains(1.0 / 3.0));
        assert!(PdLevel::new(4).unwrap().contains(0.5));
        assert!(!PdLevel::new(0).unwrap().contains(0.0));
        assert!(PdLevel::new(5).is_err());
    }

    #[test]
    fn parse_and_display() {
        let l: RfLevel = "rf-3".parse().unwrap();
        assert_eq!(l.rate(), Some(0.01));
        assert_eq!(l.to_string(), "rf-3");
        assert_eq!("2".parse::<FiLevel>().unwrap().alpha(), 1.5);
        assert!("nc-3".parse::<NcLevel>().is_err());
        assert!(LevelGrid::parse(&["xx=1"]).is_err());
        let g = LevelGrid::parse(&["pd=pd-1,pd-2"]).unwrap();
        assert_eq!(g.len(), 2 * 6 * 3 * 4);
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(json, "\"rf-3\"");
        assert_eq!(serde_json::from_str::<RfLevel>(&json).unwrap(), l);
    }
}
