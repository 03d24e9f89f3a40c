//! Domains of class-indexed feature vectors, episodic sampling, class
//! splits, the synthetic multi-domain generator, and dataset files.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Query items per class when none is specified.
pub const DEFAULT_QUERY: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Which classes of a domain an operation may draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassPool {
    All,
    Only(Split),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassData {
    pub id: u32,
    pub split: Option<Split>,
    /// Row-major `count x dim` values.
    samples: Vec<f64>,
}

impl ClassData {
    pub fn new(id: u32, samples: Vec<f64>) -> Self {
        Self { id, split: None, samples }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub name: String,
    dim: usize,
    classes: Vec<ClassData>,
}

impl Domain {
    pub fn new(name: impl Into<String>, dim: usize, classes: Vec<ClassData>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::dim("domain", "feature width must be positive"));
        }
        let mut ids = BTreeSet::new();
        for c in &classes {
            if !ids.insert(c.id) {
                return Err(Error::Contract(format!("duplicate class id {}", c.id)));
            }
            if c.samples.is_empty() {
                return Err(Error::Contract(format!("class {} has no samples", c.id)));
            }
            if c.samples.len() % dim != 0 {
                return Err(Error::dim(
                    "domain",
                    format!("class {}: {} values is not a multiple of width {dim}", c.id, c.samples.len()),
                ));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[ClassData] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_len(&self, idx: usize) -> usize {
        self.classes[idx].samples.len() / self.dim
    }

    pub fn sample(&self, class_idx: usize, item: usize) -> &[f64] {
        &self.classes[class_idx].samples[item * self.dim..(item + 1) * self.dim]
    }

    pub fn total_samples(&self) -> usize {
        (0..self.classes.len()).map(|i| self.class_len(i)).sum()
    }

    /// Equal samples, ids and split tags, ignoring the name.
    pub fn same_content(&self, other: &Domain) -> bool {
        self.dim == other.dim && self.classes == other.classes
    }

    pub fn is_split(&self) -> bool {
        self.classes.iter().any(|c| c.split.is_some())
    }

    /// Indices (into [`Domain::classes`]) of the classes in `pool`.
    pub fn pool_indices(&self, pool: ClassPool) -> Vec<usize> {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| match pool {
                ClassPool::All => true,
                ClassPool::Only(s) => c.split == Some(s),
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// The train split for tagged domains, otherwise every class.
    pub fn training_pool(&self) -> ClassPool {
        if self.is_split() {
            ClassPool::Only(Split::Train)
        } else {
            ClassPool::All
        }
    }

    /// The test split for tagged domains, otherwise every class.
    pub fn evaluation_pool(&self) -> ClassPool {
        if self.is_split() {
            ClassPool::Only(Split::Test)
        } else {
            ClassPool::All
        }
    }

    /// A new untagged domain holding only the classes of `split`.
    pub fn subset(&self, split: Split) -> Domain {
        let classes = self
            .classes
            .iter()
            .filter(|c| c.split == Some(split))
            .map(|c| ClassData::new(c.id, c.samples.clone()))
            .collect();
        Domain {
            name: format!("{}.{split}", self.name),
            dim: self.dim,
            classes,
        }
    }
}

/// One few-shot task. Labels are relabeled to `0..n_way`; support and query
/// rows are grouped by label in increasing order.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub n_way: usize,
    pub n_shot: usize,
    pub n_query: usize,
    pub support_x: Tensor,
    pub support_y: Vec<usize>,
    pub query_x: Tensor,
    pub query_y: Vec<usize>,
    pub domain: String,
    /// Original class id behind each relabeled class.
    pub class_ids: Vec<u32>,
}

impl Episode {
    /// Support rows followed by query rows.
    pub fn joint_batch(&self) -> Tensor {
        let mut data = self.support_x.to_vec();
        data.extend_from_slice(self.query_x.data());
        let rows = self.support_y.len() + self.query_y.len();
        Tensor::from_parts(vec![rows, self.support_x.shape()[1]], data)
    }
}

pub fn sample_episode(
    domain: &Domain,
    pool: ClassPool,
    n_way: usize,
    n_shot: usize,
    n_query: usize,
    rng: &mut RngStream,
) -> Result<Episode> {
    if n_way == 0 || n_shot == 0 || n_query == 0 {
        return Err(Error::Contract("episode sizes must be positive".into()));
    }
    let candidates = domain.pool_indices(pool);
    if candidates.len() < n_way {
        return Err(Error::Capacity(format!(
            "domain `{}` has {} classes in {pool:?}, {n_way}-way episode needs {n_way}",
            domain.name,
            candidates.len()
        )));
    }
    let picked: Vec<usize> = rng
        .choose_indices(candidates.len(), n_way)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    let per_class = n_shot + n_query;
    let dim = domain.dim;
    let mut support = Vec::with_capacity(n_way * n_shot * dim);
    let mut query = Vec::with_capacity(n_way * n_query * dim);
    for &ci in &picked {
        let available = domain.class_len(ci);
        if available < per_class {
            return Err(Error::Capacity(format!(
                "class {} of `{}` has {available} samples, episode needs {per_class}",
                domain.classes[ci].id, domain.name
            )));
        }
        let items = rng.choose_indices(available, per_class);
        for &it in &items[..n_shot] {
            support.extend_from_slice(domain.sample(ci, it));
        }
        for &it in &items[n_shot..] {
            query.extend_from_slice(domain.sample(ci, it));
        }
    }
    Ok(Episode {
        n_way,
        n_shot,
        n_query,
        support_x: Tensor::from_parts(vec![n_way * n_shot, dim], support),
        support_y: (0..n_way).flat_map(|k| std::iter::repeat(k).take(n_shot)).collect(),
        query_x: Tensor::from_parts(vec![n_way * n_query, dim], query),
        query_y: (0..n_way).flat_map(|k| std::iter::repeat(k).take(n_query)).collect(),
        domain: domain.name.clone(),
        class_ids: picked.iter().map(|&i| domain.classes[i].id).collect(),
    })
}

/// Tags every class with a split by shuffled order. Validation and test
/// receive `round(fraction * K)` classes; train gets the remainder.
pub fn split_classes(domain: &Domain, fractions: (f64, f64, f64), rng: &mut RngStream) -> Result<Domain> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let k = domain.num_classes();
    let n_val = (fv * k as f64).round() as usize;
    let n_test = (fs * k as f64).round() as usize;
    let n_train = k.saturating_sub(n_val + n_test);
    if k >= 3 && (n_train == 0 || n_val == 0 || n_test == 0) {
        return Err(Error::Capacity(format!(
            "{k} classes split as {n_train}/{n_val}/{n_test} leaves an empty split"
        )));
    }
    let mut order: Vec<usize> = (0..k).collect();
    rng.shuffle(&mut order);
    let mut out = domain.clone();
    for (pos, &ci) in order.iter().enumerate() {
        out.classes[ci].split = Some(if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(out)
}

/// Parameters of one synthetic domain.
///
/// Class prototypes live in a latent space and are shared by every domain
/// with the same `master_seed`; the domain seed controls how they are
/// projected, squashed, rescaled and shifted into the observed space.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDomainSpec {
    pub name: String,
    pub master_seed: u64,
    pub domain_seed: u64,
    pub num_classes: usize,
    pub latent_dim: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Std of latent within-class noise.
    pub noise: f64,
    /// Magnitude of the domain-specific projection, scale and shift.
    pub warp: f64,
}

impl Default for SyntheticDomainSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            master_seed: 0,
            domain_seed: 0,
            num_classes: 20,
            latent_dim: 8,
            dim: 16,
            per_class: 50,
            noise: 0.5,
            warp: 1.0,
        }
    }
}

/// Samples `x = tanh(A_d (c_y + e)) * s_d + b_d` with `e ~ N(0, noise^2 I)`.
///
/// `A_d = A_0 + warp * G_d`, where `A_0` comes from the master seed and
/// `G_d` from the domain seed (entries `N(0, 1/k)`); `s_d = exp(warp * N(0, 1/4))`
/// and `b_d = warp * N(0, 1)` per observed dimension.
pub fn generate_synthetic_domain(spec: &SyntheticDomainSpec) -> Result<Domain> {
    let (k, d) = (spec.latent_dim, spec.dim);
    if k == 0 || d < k || spec.num_classes == 0 || spec.per_class == 0 {
        return Err(Error::Config(format!(
            "synthetic domain needs dim >= latent_dim >= 1 and positive class sizes, got {spec:?}"
        )));
    }
    let master = |label: &str, idx: u64| RngStream::substream(spec.master_seed, label, idx);
    let local = |label: &str, idx: u64| RngStream::substream(spec.domain_seed, label, idx);

    let inv_sqrt_k = 1.0 / (k as f64).sqrt();
    let base = master("base-projection", 0).normals(d * k);
    let warp = local("projection", 0).normals(d * k);
    let proj: Vec<f64> = base
        .iter()
        .zip(&warp)
        .map(|(b, w)| (b + spec.warp * w) * inv_sqrt_k)
        .collect();
    let scale: Vec<f64> = local("scale", 0)
        .normals(d)
        .into_iter()
        .map(|z| (0.5 * spec.warp * z).exp())
        .collect();
    let shift: Vec<f64> = local("shift", 0).normals(d).into_iter().map(|z| spec.warp * z).collect();

    let mut classes = Vec::with_capacity(spec.num_classes);
    let mut latent = vec![0.0; k];
    for y in 0..spec.num_classes {
        let proto = master("prototype", y as u64).normals(k);
        let mut noise = local("sample", y as u64);
        let mut samples = Vec::with_capacity(spec.per_class * d);
        for _ in 0..spec.per_class {
            for (l, p) in latent.iter_mut().zip(&proto) {
                *l = p + spec.noise * noise.normal();
            }
            for r in 0..d {
                let a: f64 = proj[r * k..(r + 1) * k].iter().zip(&latent).map(|(w, l)| w * l).sum();
                samples.push(a.tanh() * scale[r] + shift[r]);
            }
        }
        classes.push(ClassData::new(y as u32, samples));
    }
    Domain::new(spec.name.clone(), d, classes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Binary,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DatasetFormat::Csv),
            "binary" | "fsds" => Ok(DatasetFormat::Binary),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

impl DatasetFormat {
    /// `.csv` files are CSV; everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Binary,
        }
    }
}

const FSDS_MAGIC: &[u8; 4] = b"FSDS";
const FSDS_VERSION: u32 = 1;

pub fn domain_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "domain".into())
}

pub fn load_domain(path: &Path, format: DatasetFormat) -> Result<Domain> {
    let file = File::open(path)?;
    let name = domain_name(path);
    match format {
        DatasetFormat::Csv => read_csv(BufReader::new(file), name),
        DatasetFormat::Binary => read_binary(BufReader::new(file), name),
    }
}

pub fn save_domain(domain: &Domain, path: &Path, format: DatasetFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        DatasetFormat::Csv => write_csv(domain, &mut w)?,
        DatasetFormat::Binary => write_binary(domain, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

/// Collects rows into classes in first-appearance order.
fn push_row(classes: &mut Vec<ClassData>, id: u32, row: &[f64]) {
    match classes.iter_mut().find(|c| c.id == id) {
        Some(c) => c.samples.extend_from_slice(row),
        None => classes.push(ClassData::new(id, row.to_vec())),
    }
}

pub fn read_csv<R: BufRead>(reader: R, name: String) -> Result<Domain> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        detail: "empty file".into(),
    })??;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if cols.first().map(|c| c.trim()) != Some("class_id") || cols.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            detail: "header must be `class_id,f0,...`".into(),
        });
    }
    let dim = cols.len() - 1;
    let mut classes = Vec::new();
    let mut row = Vec::with_capacity(dim);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id_field = fields.next().unwrap_or_default().trim();
        let id: u32 = id_field.parse().map_err(|_| Error::Parse {
            line: line_no,
            detail: format!("bad class id `{id_field}`"),
        })?;
        row.clear();
        for f in fields {
            row.push(f.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                detail: format!("bad value `{f}`"),
            })?);
        }
        if row.len() != dim {
            return Err(Error::Parse {
                line: line_no,
                detail: format!("row {line_no} has {} values, header declares {dim}", row.len()),
            });
        }
        push_row(&mut classes, id, &row);
    }
    Domain::new(name, dim, classes)
}

pub fn write_csv<W: Write>(domain: &Domain, w: &mut W) -> Result<()> {
    write!(w, "class_id")?;
    for f in 0..domain.dim {
        write!(w, ",f{f}")?;
    }
    writeln!(w)?;
    for (ci, c) in domain.classes.iter().enumerate() {
        for item in 0..domain.class_len(ci) {
            write!(w, "{}", c.id)?;
            for v in domain.sample(ci, item) {
                // `{}` on f64 prints the shortest round-tripping form.
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| truncated(e, what))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn truncated(e: std::io::Error, what: &str) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Length(format!("file ended while reading {what}"))
    } else {
        Error::Io(e)
    }
}

pub fn read_binary<R: Read>(mut r: R, name: String) -> Result<Domain> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| truncated(e, "magic"))?;
    if &magic != FSDS_MAGIC {
        return Err(Error::Format(format!("bad dataset magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != FSDS_VERSION {
        return Err(Error::Format(format!("unknown dataset version {version}")));
    }
    let class_count = read_u32(&mut r, "class count")? as usize;
    let dim = read_u32(&mut r, "dim")? as usize;
    let mut classes = Vec::with_capacity(class_count.min(1 << 16));
    for c in 0..class_count {
        let id = read_u32(&mut r, "class id")?;
        let count = read_u32(&mut r, "sample count")? as usize;
        let mut bytes = vec![0u8; count * dim * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| truncated(e, &format!("samples of class {c}")))?;
        let samples = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        classes.push(ClassData::new(id, samples));
    }
    Domain::new(name, dim, classes)
}

pub fn write_binary<W: Write>(domain: &Domain, w: &mut W) -> Result<()> {
    w.write_all(FSDS_MAGIC)?;
    w.write_all(&FSDS_VERSION.to_le_bytes())?;
    w.write_all(&(domain.classes.len() as u32).to_le_bytes())?;
    w.write_all(&(domain.dim as u32).to_le_bytes())?;
    for (ci, c) in domain.classes.iter().enumerate() {
        w.write_all(&c.id.to_le_bytes())?;
        w.write_all(&(domain.class_len(ci) as u32).to_le_bytes())?;
        for v in &c.samples {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}
