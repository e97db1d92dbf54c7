//! Dataset manifests, demographic cell tables and balanced subset selection.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageId;
use crate::rng::StreamKey;

macro_rules! label_enum {
    ($name:ident { $($variant:ident => [$($alias:literal),+]),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                Self::ALL.iter().position(|&v| v == self).unwrap()
            }

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => [$($alias),+][0]),+ }
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                let lower = s.trim().to_ascii_lowercase();
                $(if [$($alias),+].contains(&lower.as_str()) { return Ok($name::$variant); })+
                Err(Error::invalid(format!(concat!("unknown ", stringify!($name), " label `{}`"), s)))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

label_enum!(AgeGroup {
    Minor => ["minor", "mi", "minors"],
    Youth => ["youth", "y"],
    MiddleAged => ["middle_aged", "ma", "middle-aged"],
    Senior => ["senior", "s"],
});

label_enum!(Ethnicity {
    Asian => ["asian", "a"],
    White => ["white", "w"],
    Black => ["black", "b"],
});

label_enum!(Gender {
    Male => ["male", "m"],
    Female => ["female", "f"],
});

pub const N_CELLS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labels {
    pub age: AgeGroup,
    pub ethnicity: Ethnicity,
    pub gender: Gender,
}

impl Labels {
    /// Cell index in `0..24`, age-major.
    pub fn cell(&self) -> usize {
        (self.age.index() * Ethnicity::ALL.len() + self.ethnicity.index()) * Gender::ALL.len()
            + self.gender.index()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: ImageId,
    pub path: PathBuf,
    pub labels: Option<Labels>,
}

impl ManifestRow {
    pub fn unlabeled(id: ImageId, path: impl Into<PathBuf>) -> Self {
        ManifestRow {
            id,
            path: path.into(),
            labels: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    id: String,
    path: String,
    #[serde(default)]
    age: Option<String>,
    #[serde(default)]
    ethnicity: Option<String>,
    #[serde(default)]
    gender: Option<String>,
}

/// Ordered image list with unique ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
    /// Directory relative paths resolve against.
    base: Option<PathBuf>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.id.clone()) {
                return Err(Error::invalid(format!("duplicate manifest id `{}`", r.id)));
            }
        }
        Ok(Manifest { rows, base: None })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base.as_deref()
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        match &self.base {
            Some(base) if row.path.is_relative() => base.join(&row.path),
            _ => row.path.clone(),
        }
    }

    pub fn truncated(&self, n: usize) -> Manifest {
        Manifest {
            rows: self.rows.iter().take(n).cloned().collect(),
            base: self.base.clone(),
        }
    }

    pub fn from_csv_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for (line, rec) in rdr.deserialize::<CsvRow>().enumerate() {
            let rec = rec.map_err(|e| Error::invalid(format!("manifest row {}: {e}", line + 1)))?;
            let present = |v: &Option<String>| v.as_deref().filter(|s| !s.is_empty()).map(str::to_owned);
            let labels = match (present(&rec.age), present(&rec.ethnicity), present(&rec.gender)) {
                (None, None, None) => None,
                (Some(a), Some(e), Some(g)) => Some(Labels {
                    age: a.parse()?,
                    ethnicity: e.parse()?,
                    gender: g.parse()?,
                }),
                _ => {
                    return Err(Error::invalid(format!(
                        "manifest row `{}` has a partial label set",
                        rec.id
                    )))
                }
            };
            rows.push(ManifestRow {
                id: ImageId::new(rec.id),
                path: PathBuf::from(rec.path),
                labels,
            });
        }
        Manifest::new(rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut m = Manifest::from_csv_reader(file)?;
        m.base = path.parent().map(Path::to_path_buf);
        Ok(m)
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow {
                id: r.id.0.clone(),
                path: r.path.to_string_lossy().into_owned(),
                age: r.labels.map(|l| l.age.to_string()),
                ethnicity: r.labels.map(|l| l.ethnicity.to_string()),
                gender: r.labels.map(|l| l.gender.to_string()),
            })
            .expect("in-memory csv write");
        }
        if self.rows.is_empty() {
            return "id,path,age,ethnicity,gender\n".into();
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Counts over the 4 x 3 x 2 label cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTable {
    pub counts: [u64; N_CELLS],
}

impl CellTable {
    pub fn from_counts(counts: [u64; N_CELLS]) -> Self {
        CellTable { counts }
    }

    /// Tallies labeled rows; unlabeled rows are ignored.
    pub fn from_manifest(m: &Manifest) -> Self {
        let mut counts = [0u64; N_CELLS];
        for l in m.rows().iter().filter_map(|r| r.labels) {
            counts[l.cell()] += 1;
        }
        CellTable { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Shannon entropy of the cell distribution, in bits.
pub fn joint_entropy(cells: &CellTable) -> Result<f64> {
    let total = cells.total();
    if total == 0 {
        return Err(Error::invalid("joint entropy of an empty cell table"));
    }
    let t = total as f64;
    Ok(cells
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.log2()
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spill {
    pub cell: usize,
    pub extra: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub requested: usize,
    pub selected: usize,
    pub seed: u64,
    pub quotas: Vec<u64>,
    pub taken: Vec<u64>,
    /// Cells that could not fill their quota and how many they lacked.
    pub shortfalls: Vec<Spill>,
    /// Cells that absorbed the shortfall.
    pub spills: Vec<Spill>,
    pub joint_entropy: f64,
}

#[derive(Clone, Debug)]
pub struct BalancedSubset {
    pub manifest: Manifest,
    pub report: BalanceReport,
}

impl BalancedSubset {
    /// Writes the subset CSV and a `<name>.meta.json` sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.manifest.write_csv(path)?;
        let meta = path.with_extension("meta.json");
        let json = serde_json::to_string_pretty(&self.report).expect("report serializes");
        std::fs::write(&meta, json).map_err(|e| Error::io(meta, e))
    }
}

/// Picks up to `n` rows spread as evenly as possible over the 24 cells.
///
/// Each cell gets `floor(n / 24)`; the remainder goes one each to the cells
/// with the most rows (lowest cell index on ties). Rows within a cell are
/// chosen by a seeded shuffle. Any quota a cell cannot meet is handed out one
/// row at a time to whichever cell has the most rows left. The subset keeps
/// manifest order.
pub fn balance_subset(m: &Manifest, n: usize, seed: u64) -> Result<BalancedSubset> {
    let unlabeled: Vec<&str> = m
        .rows()
        .iter()
        .filter(|r| r.labels.is_none())
        .map(|r| r.id.as_str())
        .collect();
    if !unlabeled.is_empty() {
        return Err(Error::invalid(format!(
            "balance needs labels on every row; unlabeled: {}",
            unlabeled.join(", ")
        )));
    }

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); N_CELLS];
    for (i, r) in m.rows().iter().enumerate() {
        pools[r.labels.unwrap().cell()].push(i);
    }
    for (cell, pool) in pools.iter_mut().enumerate() {
        let mut rng = StreamKey::new(seed, "balance", format!("cell{cell}")).rng();
        pool.shuffle(&mut rng);
    }
    let avail: Vec<u64> = pools.iter().map(|p| p.len() as u64).collect();
    let target = n.min(m.len()) as u64;

    let mut quotas = vec![target / N_CELLS as u64; N_CELLS];
    let mut by_size: Vec<usize> = (0..N_CELLS).collect();
    by_size.sort_by(|&a, &b| avail[b].cmp(&avail[a]).then(a.cmp(&b)));
    for &c in by_size.iter().take((target % N_CELLS as u64) as usize) {
        quotas[c] += 1;
    }

    let mut taken: Vec<u64> = (0..N_CELLS).map(|c| quotas[c].min(avail[c])).collect();
    let shortfalls: Vec<Spill> = (0..N_CELLS)
        .filter(|&c| quotas[c] > avail[c])
        .map(|c| Spill {
            cell: c,
            extra: quotas[c] - avail[c],
        })
        .collect();
    let mut deficit: u64 = shortfalls.iter().map(|s| s.extra).sum();
    let mut extra = vec![0u64; N_CELLS];
    while deficit > 0 {
        let Some(c) = (0..N_CELLS)
            .filter(|&c| avail[c] > taken[c])
            .max_by(|&a, &b| (avail[a] - taken[a]).cmp(&(avail[b] - taken[b])).then(b.cmp(&a)))
        else {
            break;
        };
        taken[c] += 1;
        extra[c] += 1;
        deficit -= 1;
    }

    let mut chosen: Vec<usize> = pools
        .iter()
        .zip(&taken)
        .flat_map(|(pool, &t)| pool[..t as usize].iter().copied())
        .collect();
    chosen.sort_unstable();
    let rows: Vec<ManifestRow> = chosen.iter().map(|&i| m.rows()[i].clone()).collect();
    let manifest = Manifest {
        rows,
        base: m.base.clone(),
    };
    let entropy = if manifest.is_empty() {
        0.0
    } else {
        joint_entropy(&CellTable::from_manifest(&manifest))?
    };
    Ok(BalancedSubset {
        report: BalanceReport {
            requested: n,
            selected: manifest.len(),
            seed,
            quotas,
            taken,
            shortfalls,
            spills: (0..N_CELLS)
                .filter(|&c| extra[c] > 0)
                .map(|c| Spill { cell: c, extra: extra[c] })
                .collect(),
            joint_entropy: entropy,
        },
        manifest,
    })
}

/// Uniformly random subset of size `n`, for comparison with [`balance_subset`].
pub fn random_subset(m: &Manifest, n: usize, seed: u64) -> Manifest {
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.shuffle(&mut StreamKey::new(seed, "random", "subset").rng());
    idx.truncate(n);
    idx.sort_unstable();
    Manifest {
        rows: idx.into_iter().map(|i| m.rows()[i].clone()).collect(),
        base: m.base.clone(),
    }
}

/// Labeled manifest with a caller-chosen number of rows per cell.
pub fn synthetic_labeled_manifest(per_cell: &[usize; N_CELLS]) -> Manifest {
    let mut rows = Vec::new();
    for (cell, &count) in per_cell.iter().enumerate() {
        let gender = Gender::ALL[cell % 2];
        let ethnicity = Ethnicity::ALL[(cell / 2) % 3];
        let age = AgeGroup::ALL[cell / 6];
        for k in 0..count {
            let id = format!("c{cell:02}_{k:05}");
            rows.push(ManifestRow {
                path: PathBuf::from(format!("{id}.png")),
                id: ImageId::new(id),
                labels: Some(Labels { age, ethnicity, gender }),
            });
        }
    }
    Manifest::new(rows).expect("generated ids are unique")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skewed() -> Manifest {
        let mut per_cell = [0usize; N_CELLS];
        for (c, p) in per_cell.iter_mut().enumerate() {
            *p = 3 + (c * c * 7) % 90;
        }
        synthetic_labeled_manifest(&per_cell)
    }

    #[test]
    fn entropy_cases() {
        let uniform = CellTable::from_counts([5; N_CELLS]);
        assert!((joint_entropy(&uniform).unwrap() - 4.5850).abs() < 1e-4);
        assert!((joint_entropy(&uniform).unwrap() - (24f64).log2()).abs() < 1e-12);

        let mut one = [0; N_CELLS];
        one[7] = 12;
        assert_eq!(joint_entropy(&CellTable::from_counts(one)).unwrap(), 0.0);

        let mut two = [0; N_CELLS];
        two[0] = 3;
        two[23] = 3;
        assert_eq!(joint_entropy(&CellTable::from_counts(two)).unwrap(), 1.0);

        assert!(joint_entropy(&CellTable::from_counts([0; N_CELLS])).is_err());
    }

    #[test]
    fn cell_index_is_a_bijection() {
        let mut seen = HashSet::new();
        for &age in AgeGroup::ALL {
            for &ethnicity in Ethnicity::ALL {
                for &gender in Gender::ALL {
                    assert!(seen.insert(Labels { age, ethnicity, gender }.cell()));
                }
            }
        }
        assert_eq!(seen.len(), N_CELLS);
        assert!(seen.iter().all(|&c| c < N_CELLS));
    }

    #[test]
    fn one_per_cell() {
        let m = skewed();
        let sub = balance_subset(&m, 24, 1).unwrap();
        assert_eq!(sub.manifest.len(), 24);
        assert!(CellTable::from_manifest(&sub.manifest).counts.iter().all(|&c| c == 1));
        assert!((sub.report.joint_entropy - 4.5850).abs() < 1e-4);
    }

    #[test]
    fn full_uniform_manifest_is_returned_whole() {
        let m = synthetic_labeled_manifest(&[4; N_CELLS]);
        let sub = balance_subset(&m, m.len(), 9).unwrap();
        assert_eq!(sub.manifest, m);
    }

    #[test]
    fn shortfalls_spill_to_largest_cells() {
        let mut per_cell = [20usize; N_CELLS];
        per_cell[3] = 2;
        per_cell[10] = 50;
        let m = synthetic_labeled_manifest(&per_cell);
        let sub = balance_subset(&m, 240, 4).unwrap();
        assert_eq!(sub.manifest.len(), 240);
        assert_eq!(sub.report.shortfalls, vec![Spill { cell: 3, extra: 8 }]);
        assert_eq!(sub.report.spills, vec![Spill { cell: 10, extra: 8 }]);

        let capped = balance_subset(&m, 10_000, 4).unwrap();
        assert_eq!(capped.manifest.len(), m.len());
    }

    #[test]
    fn balance_is_deterministic_and_beats_random() {
        let m = skewed();
        let a = balance_subset(&m, 300, 3).unwrap();
        assert_eq!(a.manifest, balance_subset(&m, 300, 3).unwrap().manifest);
        assert_ne!(a.manifest, balance_subset(&m, 300, 4).unwrap().manifest);
        for seed in 0..20 {
            let bal = balance_subset(&m, 300, seed).unwrap().report.joint_entropy;
            let rnd = joint_entropy(&CellTable::from_manifest(&random_subset(&m, 300, seed))).unwrap();
            assert!(bal >= rnd, "seed {seed}: {bal} < {rnd}");
        }
    }

    #[test]
    fn unlabeled_rows_are_listed() {
        let mut rows = skewed().rows().to_vec();
        rows.push(ManifestRow::unlabeled(ImageId::new("stray"), "stray.png"));
        let m = Manifest::new(rows).unwrap();
        match balance_subset(&m, 24, 0) {
            Err(Error::InvalidArgument(msg)) => assert!(msg.contains("stray")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let text = "id,path,age,ethnicity,gender\na,a.png,Y,A,M\nb,b.png,,,\nc,c.png,senior,black,female\n";
        let m = Manifest::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.rows()[1].labels, None);
        assert_eq!(m.rows()[2].labels.unwrap().age, AgeGroup::Senior);
        let back = Manifest::from_csv_reader(m.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back, m);

        let minimal = Manifest::from_csv_reader("id,path\nx,x.png\n".as_bytes()).unwrap();
        assert_eq!(minimal.rows()[0].labels, None);

        assert!(Manifest::from_csv_reader("id,path\nx,a.png\nx,b.png\n".as_bytes()).is_err());
        assert!(Manifest::from_csv_reader("id,path,age,ethnicity,gender\nx,a.png,Y,,\n".as_bytes()).is_err());
        assert!(Manifest::from_csv_reader("id,path,age,ethnicity,gender\nx,a.png,old,A,M\n".as_bytes()).is_err());
    }
}
