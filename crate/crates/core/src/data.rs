//! Molecules, QM9-style XYZ files, synthetic datasets and splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// QM9 line-2 columns after the `gdb` tag and the integer index.
pub const QM9_COLUMNS: [&str; 15] = ["A", "B", "C", "mu", "alpha", "homo", "lumo", "gap", "r2", "zpve", "U0", "U", "H", "G", "Cv"];

/// Unit strings for the QM9 columns, in `QM9_COLUMNS` order.
pub const QM9_UNITS: [&str; 15] = [
    "GHz", "GHz", "GHz", "D", "a0^3", "Ha", "Ha", "Ha", "a0^2", "Ha", "Ha", "Ha", "Ha", "Ha", "cal/(mol K)",
];

/// Symbols of the two dipole constituents.
pub const POSITIVE: &str = "+";
pub const NEGATIVE: &str = "-";

const MIN_SEPARATION: f64 = 1e-6;

pub fn atomic_number(symbol: &str) -> Option<u32> {
    const TABLE: [&str; 10] = ["H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne"];
    TABLE.iter().position(|s| *s == symbol).map(|i| i as u32 + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    /// Free-form identifier, e.g. `gdb_17`.
    pub id: Option<String>,
    pub elements: Vec<String>,
    /// Å.
    pub positions: Vec<[f64; 3]>,
    pub targets: BTreeMap<String, f64>,
}

impl Molecule {
    pub fn new(elements: Vec<String>, positions: Vec<[f64; 3]>, targets: BTreeMap<String, f64>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Parse {
                line: 0,
                msg: "molecule has no atoms".into(),
            });
        }
        if elements.len() != positions.len() {
            return Err(Error::Parse {
                line: 0,
                msg: format!("{} elements for {} positions", elements.len(), positions.len()),
            });
        }
        if let Some(a) = positions.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::Parse {
                line: 0,
                msg: format!("atom {a} has a non-finite coordinate"),
            });
        }
        for a in 0..positions.len() {
            for b in 0..a {
                let d2: f64 = (0..3).map(|k| (positions[a][k] - positions[b][k]).powi(2)).sum();
                if d2.sqrt() < MIN_SEPARATION {
                    return Err(Error::Parse {
                        line: 0,
                        msg: format!("atoms {b} and {a} coincide"),
                    });
                }
            }
        }
        Ok(Self {
            id: None,
            elements,
            positions,
            targets,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn num_atoms(&self) -> usize {
        self.elements.len()
    }

    pub fn target(&self, name: &str) -> Option<f64> {
        self.targets.get(name).copied()
    }

    /// Atomic numbers; `None` for pseudo-elements.
    pub fn atomic_numbers(&self) -> Vec<Option<u32>> {
        self.elements.iter().map(|e| atomic_number(e)).collect()
    }
}

fn normalize_number(tok: &str) -> String {
    tok.replace("*^", "e")
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64> {
    normalize_number(tok).parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{what}: `{tok}` is not a number"),
    })
}

fn parse_properties(record: &str, line: usize) -> Result<(Option<String>, BTreeMap<String, f64>)> {
    let tokens: Vec<&str> = record.split_whitespace().collect();
    let mut targets = BTreeMap::new();
    if tokens.first() == Some(&"gdb") {
        if tokens.len() != 2 + QM9_COLUMNS.len() {
            return Err(Error::Parse {
                line,
                msg: format!("QM9 record has {} fields, expected {}", tokens.len(), 2 + QM9_COLUMNS.len()),
            });
        }
        let idx: u64 = tokens[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("QM9 index `{}` is not an integer", tokens[1]),
        })?;
        for (name, tok) in QM9_COLUMNS.iter().zip(&tokens[2..]) {
            targets.insert(name.to_string(), parse_f64(tok, line, name)?);
        }
        return Ok((Some(format!("gdb_{idx}")), targets));
    }
    let mut id = None;
    for tok in tokens {
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected key=value, found `{tok}`"),
        })?;
        if k == "id" {
            id = Some(v.to_string());
        } else {
            targets.insert(k.to_string(), parse_f64(v, line, k)?);
        }
    }
    Ok((id, targets))
}

/// Reads one frame starting at `lines[start]`; returns the molecule and the
/// index just past its atom lines.
fn parse_frame(lines: &[&str], start: usize) -> Result<(Molecule, usize)> {
    let count_line = start + 1;
    let n: usize = lines[start].trim().parse().map_err(|_| Error::Parse {
        line: count_line,
        msg: format!("atom count `{}` is not a non-negative integer", lines[start].trim()),
    })?;
    if n == 0 {
        return Err(Error::Parse {
            line: count_line,
            msg: "atom count is zero".into(),
        });
    }
    let record = lines.get(start + 1).ok_or_else(|| Error::Parse {
        line: count_line + 1,
        msg: "missing property line".into(),
    })?;
    let (id, targets) = parse_properties(record, count_line + 1)?;
    let mut elements = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    for a in 0..n {
        let idx = start + 2 + a;
        let line_no = idx + 1;
        let line = lines.get(idx).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("expected {n} atom lines, found {a}"),
        })?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("atom line needs element and three coordinates, found {} fields", toks.len()),
            });
        }
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = parse_f64(toks[k + 1], line_no, "coordinate")?;
        }
        elements.push(toks[0].to_string());
        positions.push(p);
    }
    let mut mol = Molecule::new(elements, positions, targets).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::Parse { line: count_line, msg },
        other => other,
    })?;
    mol.id = id;
    Ok((mol, start + 2 + n))
}

/// Parses the first frame of a QM9-style XYZ document. Lines after the atom
/// block (frequencies, SMILES, InChI) are ignored.
pub fn parse_xyz(text: &str) -> Result<Molecule> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| !l.trim().is_empty()).ok_or_else(|| Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    Ok(parse_frame(&lines, start)?.0)
}

/// Parses every frame. A frame starts at any line holding a single integer;
/// other lines between frames are skipped.
pub fn parse_xyz_frames(text: &str) -> Result<Vec<Molecule>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().parse::<usize>().is_ok() {
            let (mol, next) = parse_frame(&lines, i)?;
            out.push(mol);
            i = next;
        } else {
            i += 1;
        }
    }
    Ok(out)
}

/// Writes a frame with a `key=value` property line; `f64` values use the
/// shortest representation that parses back to the same bits.
pub fn serialize_xyz(mol: &Molecule) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", mol.num_atoms());
    let mut fields = Vec::new();
    if let Some(id) = &mol.id {
        fields.push(format!("id={id}"));
    }
    fields.extend(mol.targets.iter().map(|(k, v)| format!("{k}={v:?}")));
    let _ = writeln!(s, "{}", fields.join(" "));
    for (e, p) in mol.elements.iter().zip(&mol.positions) {
        let _ = writeln!(s, "{e} {:?} {:?} {:?} 0.0", p[0], p[1], p[2]);
    }
    s
}

pub fn serialize_xyz_frames(mols: &[Molecule]) -> String {
    mols.iter().map(serialize_xyz).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub molecules: Vec<Molecule>,
    pub split: Option<SplitAssignment>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        })
    }
}

impl Dataset {
    pub fn new(molecules: Vec<Molecule>) -> Self {
        Self { molecules, split: None }
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn indices(&self, kind: SplitKind) -> Result<&[usize]> {
        let s = self.split.as_ref().ok_or_else(|| Error::Split("dataset has not been split".into()))?;
        Ok(match kind {
            SplitKind::Train => &s.train,
            SplitKind::Val => &s.val,
            SplitKind::Test => &s.test,
        })
    }

    pub fn subset(&self, kind: SplitKind) -> Result<Vec<&Molecule>> {
        Ok(self.indices(kind)?.iter().map(|&i| &self.molecules[i]).collect())
    }

    /// Sorted element symbols occurring in the dataset.
    pub fn elements(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.molecules.iter().flat_map(|m| m.elements.iter().map(String::as_str)).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

/// Uniform random disjoint assignment; molecules not drawn for train or
/// validation form the test split.
pub fn split(dataset: &Dataset, n_train: usize, n_val: usize, seed: u64) -> Result<Dataset> {
    if n_train + n_val > dataset.len() {
        return Err(Error::Split(format!(
            "requested {n_train} train + {n_val} validation molecules from {}",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Dataset {
        molecules: dataset.molecules.clone(),
        split: Some(SplitAssignment {
            seed,
            train: order,
            val,
            test,
        }),
    })
}

/// Two unit dipoles: `+` at the origin and `−` at `(0, 0, 1)`, and a second
/// pair centred at `(3, 0, 0)` with a uniformly random orientation.
/// Targets: `p2 = 2 + 2 cos θ₁₂`, `p = √p2`.
pub fn gen_two_dipole(n_samples: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mols = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let u: [f64; 3] = UnitSphere.sample(&mut rng);
        mols.push(two_dipole_sample(u).with_id(format!("dipole_{i}")));
    }
    Dataset::new(mols)
}

/// One two-dipole configuration whose second separation vector is `u`.
pub fn two_dipole_sample(u: [f64; 3]) -> Molecule {
    let c = [3.0, 0.0, 0.0];
    let positions = vec![
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
        [c[0] - 0.5 * u[0], c[1] - 0.5 * u[1], c[2] - 0.5 * u[2]],
        [c[0] + 0.5 * u[0], c[1] + 0.5 * u[1], c[2] + 0.5 * u[2]],
    ];
    let elements = [POSITIVE, NEGATIVE, POSITIVE, NEGATIVE].map(String::from).to_vec();
    let cos = u[2];
    let p2 = 2.0 + 2.0 * cos;
    let targets = BTreeMap::from([("p2".to_string(), p2), ("p".to_string(), p2.max(0.0).sqrt())]);
    Molecule::new(elements, positions, targets).expect("separated atoms")
}

/// Random point clouds in a 4 Å box (minimum separation 0.5 Å); target
/// `dsum = Σ_{a<b} |r_a − r_b|`. All atoms are carbon.
pub fn gen_distance_sum(n_samples: usize, n_atoms: usize, seed: u64) -> Result<Dataset> {
    if n_atoms < 2 {
        return Err(Error::Config("distance-sum samples need at least two atoms".into()));
    }
    const BOX: f64 = 4.0;
    const MIN_SEP: f64 = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mols = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut pos: Vec<[f64; 3]> = Vec::with_capacity(n_atoms);
        while pos.len() < n_atoms {
            let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..BOX));
            if pos.iter().all(|q| dist(p, *q) >= MIN_SEP) {
                pos.push(p);
            }
        }
        let target = distance_sum(&pos);
        let m = Molecule::new(vec!["C".into(); n_atoms], pos, BTreeMap::from([("dsum".into(), target)]))?;
        mols.push(m.with_id(format!("dsum_{i}")));
    }
    Ok(Dataset::new(mols))
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn distance_sum(pos: &[[f64; 3]]) -> f64 {
    let mut s = 0.0;
    for a in 0..pos.len() {
        for b in a + 1..pos.len() {
            s += dist(pos[a], pos[b]);
        }
    }
    s
}

/// Integers listed one per line; `#` starts a comment.
pub fn read_exclusion_list(path: &Path) -> Result<BTreeSet<u64>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        for tok in body.split_whitespace() {
            out.insert(tok.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("exclusion entry `{tok}` is not an integer"),
            })?);
        }
    }
    Ok(out)
}

/// Loads every `.xyz` file in `dir` (sorted by name), all frames of each.
/// Molecules whose `gdb_<n>` id is listed in `exclude` are dropped.
pub fn load_dir(dir: &Path, exclude: Option<&BTreeSet<u64>>) -> Result<Dataset> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xyz"))
        .collect();
    files.sort();
    let mut mols = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f)?;
        let frames = parse_xyz_frames(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", f.display()),
            },
            other => other,
        })?;
        for m in frames {
            let skip = exclude.is_some_and(|ex| {
                m.id.as_deref()
                    .and_then(|id| id.strip_prefix("gdb_"))
                    .and_then(|n| n.parse().ok())
                    .is_some_and(|n| ex.contains(&n))
            });
            if !skip {
                mols.push(m);
            }
        }
    }
    Ok(Dataset::new(mols))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub molecules: usize,
}

/// Describes a generated dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub seed: u64,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `molecules` to `dir/data.xyz` plus a manifest.
pub fn write_dataset(dir: &Path, molecules: &[Molecule], mut manifest: Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = "data.xyz";
    fs::write(dir.join(file), serialize_xyz_frames(molecules))?;
    manifest.files = vec![ManifestEntry {
        file: file.into(),
        molecules: molecules.len(),
    }];
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const QM9_METHANE: &str = "5\n\
gdb 1\t157.7118\t157.70997\t157.70699\t0.\t13.21\t-0.3877\t0.1171\t0.5048\t35.3641\t0.044749\t-40.47893\t-40.476062\t-40.475117\t-40.498597\t6.469\t\n\
C\t-0.0126981359\t 1.0858041578\t 0.0080009958\t-0.535689\n\
H\t 0.002150416\t-0.0060313176\t 0.0019761204\t 0.133921\n\
H\t 1.0117308433\t 1.4637511618\t 0.0002765748\t 0.133922\n\
H\t-0.540815069\t 1.4475266138\t-0.8766437152\t 0.133923\n\
H\t-0.5238136345\t 1.4379326443\t 0.9063972942\t 0.133923\n\
1341.307\t1341.3284\t1341.365\t1562.6731\t1562.7453\t3038.3205\t3151.6034\t3151.6788\t3151.7078\n\
C\tC\t\n\
InChI=1S/CH4/h1H4\tInChI=1S/CH4/h1H4\n";

    #[test]
    fn parses_qm9_record() {
        let m = parse_xyz(QM9_METHANE).unwrap();
        assert_eq!(m.num_atoms(), 5);
        assert_eq!(m.id.as_deref(), Some("gdb_1"));
        assert_eq!(m.elements[0], "C");
        assert_eq!(m.target("U0"), Some(-40.47893));
        assert_eq!(m.target("Cv"), Some(6.469));
        assert_eq!(m.target("mu"), Some(0.0));
        assert_eq!(m.positions[2], [1.0117308433, 1.4637511618, 0.0002765748]);
    }

    #[test]
    fn minimal_single_atom() {
        let text = format!("1\ngdb 1{}\nC 0 0 0 0\n", "\t0".repeat(15));
        let m = parse_xyz(&text).unwrap();
        assert_eq!(m.num_atoms(), 1);
        assert_eq!(m.elements, vec!["C"]);
    }

    #[test]
    fn fortran_exponents_are_normalized() {
        let text = "2\nx=1.5*^-5\nH 0 0 0\nH 0 0 7.4*^-1\n";
        let m = parse_xyz(text).unwrap();
        assert_eq!(m.target("x"), Some(1.5e-5));
        assert_eq!(m.positions[1][2], 0.74);
    }

    #[test]
    fn short_atom_block_reports_line() {
        let text = "5\nk=1\nC 0 0 0\nH 1 0 0\nH 0 1 0\nH 0 0 1\n";
        match parse_xyz(text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 7, "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_coordinates_and_duplicates_are_rejected() {
        assert!(matches!(parse_xyz("1\nk=1\nC 0 zero 0\n"), Err(Error::Parse { line: 3, .. })));
        assert!(parse_xyz("2\nk=1\nC 0 0 0\nC 0 0 0\n").is_err());
        assert!(parse_xyz("0\nk=1\n").is_err());
    }

    #[test]
    fn qm9_round_trip() {
        let m = parse_xyz(QM9_METHANE).unwrap();
        let again = parse_xyz(&serialize_xyz(&m)).unwrap();
        assert_eq!(m, again);
    }

    proptest! {
        #[test]
        fn serialize_round_trip(
            coords in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 1..8),
            t in -1e6f64..1e6,
        ) {
            let mut pos = coords.clone();
            for (i, p) in pos.iter_mut().enumerate() {
                p[0] += 50.0 * i as f64;
            }
            let elements = vec!["N".to_string(); pos.len()];
            let m = Molecule::new(elements, pos, BTreeMap::from([("t".into(), t)])).unwrap().with_id("m1");
            prop_assert_eq!(parse_xyz(&serialize_xyz(&m)).unwrap(), m);
        }
    }

    #[test]
    fn multi_frame_files() {
        let ds = gen_two_dipole(3, 9);
        let text = format!("{}{}", QM9_METHANE, serialize_xyz_frames(&ds.molecules));
        let frames = parse_xyz_frames(&text).unwrap();
        assert_eq!(frames.len(), 4);
        assert_eq!(&frames[1..], &ds.molecules[..]);
    }

    #[test]
    fn two_dipole_targets() {
        let aligned = two_dipole_sample([0.0, 0.0, 1.0]);
        assert_eq!(aligned.target("p2"), Some(4.0));
        assert_eq!(aligned.target("p"), Some(2.0));
        assert_eq!(two_dipole_sample([0.0, 0.0, -1.0]).target("p2"), Some(0.0));
        let perp = two_dipole_sample([1.0, 0.0, 0.0]);
        assert_eq!(perp.target("p2"), Some(2.0));
        assert_eq!(perp.target("p"), Some(2f64.sqrt()));
    }

    #[test]
    fn two_dipole_orientations_are_uniform() {
        let ds = gen_two_dipole(100_000, 1);
        let n = ds.len() as f64;
        let cos: Vec<f64> = ds.molecules.iter().map(|m| m.target("p2").unwrap() / 2.0 - 1.0).collect();
        let mean = cos.iter().sum::<f64>() / n;
        let mean_sq = cos.iter().map(|c| c * c).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((mean_sq - 1.0 / 3.0).abs() < 0.01, "{mean_sq}");
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_two_dipole(20, 5), gen_two_dipole(20, 5));
        assert_eq!(gen_distance_sum(20, 4, 5).unwrap(), gen_distance_sum(20, 4, 5).unwrap());
    }

    #[test]
    fn distance_sum_examples() {
        assert_eq!(distance_sum(&[[0.0; 3], [1.0, 0.0, 0.0]]), 1.0);
        let h = 3f64.sqrt() / 2.0;
        let tri = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0]];
        assert!((distance_sum(&tri) - 3.0).abs() < 1e-15);
        let ds = gen_distance_sum(5, 6, 2).unwrap();
        for m in &ds.molecules {
            assert_eq!(m.target("dsum"), Some(distance_sum(&m.positions)));
            assert!(m.positions.iter().flatten().all(|x| (0.0..4.0).contains(x)));
        }
    }

    #[test]
    fn split_properties() {
        let ds = gen_two_dipole(100, 0);
        let a = split(&ds, 80, 10, 3).unwrap();
        let s = a.split.as_ref().unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split(&ds, 80, 10, 3).unwrap().split, a.split);
        assert_ne!(split(&ds, 80, 10, 4).unwrap().split.unwrap().train, s.train);
        assert!(matches!(split(&ds, 95, 10, 0), Err(Error::Split(_))));
    }

    #[test]
    fn directory_loading_honours_exclusions() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("dsgdb9nsd_000001.xyz"), QM9_METHANE).unwrap();
        fs::write(dir.path().join("b.xyz"), QM9_METHANE.replace("gdb 1\t", "gdb 2\t")).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let ex_path = dir.path().join("exclude.txt");
        fs::write(&ex_path, "# uncharacterized\n2\n").unwrap();
        let ex = read_exclusion_list(&ex_path).unwrap();
        let ds = load_dir(dir.path(), Some(&ex)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.molecules[0].id.as_deref(), Some("gdb_1"));
        assert_eq!(load_dir(dir.path(), None).unwrap().len(), 2);
    }
}
