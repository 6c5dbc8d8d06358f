//! Chain container, binary serialization, manifest, and trace export.
//!
//! A chain file is a compact little-endian dump of every retained draw
//! next to a JSON manifest carrying the seed, sweep counts, and the
//! spec/prior fingerprints. Writes are fully deterministic, so identical
//! seeds produce byte-identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ColumnStats, Dataset, ModelSpec, RegressionType};
use crate::priors::ParamState;
use crate::rng::CovMatrix;

const MAGIC: &[u8; 8] = b"PGLMMCH1";

/// Stable hex fingerprint of any serializable artifact (model spec, prior
/// spec), used to tie chains to the inputs that produced them.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("artifact serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Shape information required to deserialize draws.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainDims {
    pub n: usize,
    pub m: usize,
    pub n_clusters: usize,
    pub q_fe: usize,
    pub q_re: usize,
    pub q_int: usize,
    pub q_uc: usize,
    pub cat_counts: Vec<usize>,
    pub probit: bool,
}

impl ChainDims {
    pub fn from_model(spec: &ModelSpec, data: &Dataset) -> Self {
        Self {
            n: data.n,
            m: data.m,
            n_clusters: spec.n_clusters_max,
            q_fe: data.q_fe(),
            q_re: data.q_re(),
            q_int: data.q_int(),
            q_uc: data.q_uc(),
            cat_counts: data.cat_counts(),
            probit: spec.regression_type == RegressionType::Probit,
        }
    }
}

/// Retained post-burn-in draws plus the metadata needed to reproduce,
/// verify, and post-process the run without re-reading the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcChain {
    pub dims: ChainDims,
    pub spec: ModelSpec,
    /// Training category maps per categorical clustering covariate.
    pub cat_levels: Vec<Vec<String>>,
    /// Standardization statistics recorded at compile time, if any.
    pub standardization: Option<BTreeMap<String, ColumnStats>>,
    pub draws: Vec<ParamState>,
    pub n_iterations: usize,
    pub n_burn_in: usize,
    pub seed: u64,
    pub spec_fingerprint: String,
    pub prior_fingerprint: String,
}

impl McmcChain {
    /// Number of retained draws H = n_iterations - n_burn_in.
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }
}

/// Manifest written next to each chain file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub seed: u64,
    pub n_iterations: usize,
    pub n_burn_in: usize,
    pub n_draws: usize,
    pub n_observations: usize,
    pub regression_type: String,
    pub spec_fingerprint: String,
    pub prior_fingerprint: String,
}

impl ChainManifest {
    pub fn from_chain(chain: &McmcChain) -> Self {
        Self {
            seed: chain.seed,
            n_iterations: chain.n_iterations,
            n_burn_in: chain.n_burn_in,
            n_draws: chain.n_draws(),
            n_observations: chain.dims.n,
            regression_type: if chain.dims.probit {
                "probit".into()
            } else {
                "linear".into()
            },
            spec_fingerprint: chain.spec_fingerprint.clone(),
            prior_fingerprint: chain.prior_fingerprint.clone(),
        }
    }
}

/// Path of the manifest that accompanies a chain file.
pub fn manifest_path(chain_path: &Path) -> PathBuf {
    chain_path.with_extension("manifest.json")
}

struct Encoder<W: Write> {
    w: W,
}

impl<W: Write> Encoder<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64_slice<'a, I: IntoIterator<Item = &'a f64>>(&mut self, vs: I) -> Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        self.w.write_all(s.as_bytes())?;
        Ok(())
    }
}

struct Decoder<R: Read> {
    r: R,
}

impl<R: Read> Decoder<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.r.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.r.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut buf = [0u8; 8];
        self.r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    }

    fn f64_vec(&mut self, len: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(Error::InvalidChainFile("oversized string field".into()));
        }
        let mut buf = vec![0u8; len];
        self.r.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| Error::InvalidChainFile("non-utf8 string".into()))
    }
}

fn matrix_row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

fn matrix_from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| data[i * cols + j])
}

/// Writes the chain binary and its manifest (`<stem>.manifest.json`).
pub fn write_chain(chain: &McmcChain, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut enc = Encoder {
        w: BufWriter::new(file),
    };
    enc.w.write_all(MAGIC)?;
    let d = &chain.dims;
    enc.u32(if d.probit { 1 } else { 0 })?;
    enc.u64(chain.seed)?;
    for v in [
        chain.n_iterations,
        chain.n_burn_in,
        chain.n_draws(),
        d.n,
        d.m,
        d.n_clusters,
        d.q_fe,
        d.q_re,
        d.q_int,
        d.q_uc,
        d.cat_counts.len(),
    ] {
        enc.u32(v as u32)?;
    }
    for &k in &d.cat_counts {
        enc.u32(k as u32)?;
    }
    enc.str(&chain.spec_fingerprint)?;
    enc.str(&chain.prior_fingerprint)?;

    for state in &chain.draws {
        enc.f64_slice(state.beta.iter())?;
        enc.f64(state.sigma2)?;
        for v in matrix_row_major(&state.eta) {
            enc.f64(v)?;
        }
        for v in matrix_row_major(state.w_re.as_matrix()) {
            enc.f64(v)?;
        }
        for v in matrix_row_major(&state.gamma) {
            enc.f64(v)?;
        }
        for v in matrix_row_major(state.w_int.as_matrix()) {
            enc.f64(v)?;
        }
        for p in &state.phi {
            for v in matrix_row_major(p) {
                enc.f64(v)?;
            }
        }
        for v in matrix_row_major(&state.mu) {
            enc.f64(v)?;
        }
        for s in &state.sigma {
            for v in matrix_row_major(s.as_matrix()) {
                enc.f64(v)?;
            }
        }
        enc.f64_slice(state.v.iter())?;
        enc.f64_slice(state.pi.iter())?;
        enc.f64(state.zeta)?;
        for &z in &state.z {
            enc.u32(z as u32)?;
        }
        if d.probit {
            enc.f64_slice(state.ystar.iter())?;
        }
    }
    enc.w.flush()?;

    let manifest = ChainManifest::from_chain(chain);
    let mut mf = File::create(manifest_path(path))?;
    mf.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    mf.write_all(b"\n")?;
    Ok(())
}

/// Reads a chain binary written by [`write_chain`].
pub fn read_chain(path: &Path) -> Result<McmcChain> {
    let file = File::open(path)?;
    let mut dec = Decoder {
        r: BufReader::new(file),
    };
    let mut magic = [0u8; 8];
    dec.r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidChainFile("bad magic bytes".into()));
    }
    let probit = dec.u32()? == 1;
    let seed = dec.u64()?;
    let n_iterations = dec.u32()? as usize;
    let n_burn_in = dec.u32()? as usize;
    let n_draws = dec.u32()? as usize;
    let n = dec.u32()? as usize;
    let m = dec.u32()? as usize;
    let n_clusters = dec.u32()? as usize;
    let q_fe = dec.u32()? as usize;
    let q_re = dec.u32()? as usize;
    let q_int = dec.u32()? as usize;
    let q_uc = dec.u32()? as usize;
    let n_cat = dec.u32()? as usize;
    let mut cat_counts = Vec::with_capacity(n_cat);
    for _ in 0..n_cat {
        cat_counts.push(dec.u32()? as usize);
    }
    let spec_fingerprint = dec.str()?;
    let prior_fingerprint = dec.str()?;

    let dims = ChainDims {
        n,
        m,
        n_clusters,
        q_fe,
        q_re,
        q_int,
        q_uc,
        cat_counts: cat_counts.clone(),
        probit,
    };

    let cov = |data: Vec<f64>, d: usize| -> Result<CovMatrix> {
        CovMatrix::new(matrix_from_row_major(d, d, &data))
            .map_err(|_| Error::InvalidChainFile("stored covariance is not SPD".into()))
    };

    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let beta = DVector::from_vec(dec.f64_vec(q_fe)?);
        let sigma2 = dec.f64()?;
        let eta = matrix_from_row_major(m, q_re, &dec.f64_vec(m * q_re)?);
        let w_re = cov(dec.f64_vec(q_re * q_re)?, q_re)?;
        let gamma = matrix_from_row_major(n_clusters, q_int, &dec.f64_vec(n_clusters * q_int)?);
        let w_int = cov(dec.f64_vec(q_int * q_int)?, q_int)?;
        let mut phi = Vec::with_capacity(n_cat);
        for &k_j in &cat_counts {
            phi.push(matrix_from_row_major(
                n_clusters,
                k_j,
                &dec.f64_vec(n_clusters * k_j)?,
            ));
        }
        let mu = matrix_from_row_major(n_clusters, q_uc, &dec.f64_vec(n_clusters * q_uc)?);
        let mut sigma = Vec::with_capacity(n_clusters);
        for _ in 0..n_clusters {
            sigma.push(cov(dec.f64_vec(q_uc * q_uc)?, q_uc)?);
        }
        let v = DVector::from_vec(dec.f64_vec(n_clusters)?);
        let pi = DVector::from_vec(dec.f64_vec(n_clusters)?);
        let zeta = dec.f64()?;
        let mut z = Vec::with_capacity(n);
        for _ in 0..n {
            let zi = dec.u32()? as usize;
            if zi >= n_clusters {
                return Err(Error::InvalidChainFile("allocation out of range".into()));
            }
            z.push(zi);
        }
        let ystar = if probit {
            DVector::from_vec(dec.f64_vec(n)?)
        } else {
            DVector::zeros(0)
        };
        draws.push(ParamState {
            beta,
            sigma2,
            eta,
            w_re,
            gamma,
            w_int,
            phi,
            mu,
            sigma,
            v,
            pi,
            zeta,
            z,
            ystar,
        });
    }

    Ok(McmcChain {
        dims,
        draws,
        n_iterations,
        n_burn_in,
        seed,
        spec_fingerprint,
        prior_fingerprint,
    })
}

/// Reads the manifest that accompanies a chain file.
pub fn read_manifest(chain_path: &Path) -> Result<ChainManifest> {
    let text = std::fs::read_to_string(manifest_path(chain_path))?;
    Ok(serde_json::from_str(&text)?)
}

/// CSV trace of the scalar parameters (zeta, sigma2, beta components), one
/// row per retained draw. Feeds trace plots.
pub fn write_trace_csv(chain: &McmcChain, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iter".to_string(), "zeta".to_string(), "sigma2".to_string()];
    for k in 0..chain.dims.q_fe {
        header.push(format!("beta_{k}"));
    }
    w.write_record(&header)?;
    for (h, state) in chain.draws.iter().enumerate() {
        let mut rec = vec![
            format!("{}", chain.n_burn_in + h),
            format!("{}", state.zeta),
            format!("{}", state.sigma2),
        ];
        for k in 0..chain.dims.q_fe {
            rec.push(format!("{}", state.beta[k]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::run_chain;
    use crate::model::{compile, Intercepts, Table};
    use crate::priors::{default_priors, theta_init};
    use crate::rng::Rng;

    fn small_chain(seed: u64) -> (McmcChain, ModelSpec) {
        let spec = ModelSpec {
            regression_type: RegressionType::Linear,
            fe: vec!["x".into()],
            re: vec![],
            re_unit: Some("unit".into()),
            lat: vec![],
            assign_cont: vec!["u".into()],
            assign_cat: vec!["grp".into()],
            outcome: "Y".into(),
            n_clusters_max: 3,
            intercepts: Intercepts {
                fe: true,
                re: true,
                lat: true,
            },
            standardize: false,
        };
        let mut gen = Rng::new(seed);
        let n = 15;
        let mut t = Table::new();
        t.push_float("x", (0..n).map(|_| gen.draw_standard_normal()).collect());
        t.push_str("unit", (0..n).map(|i| format!("u{}", i % 3)).collect());
        t.push_float("u", (0..n).map(|_| gen.draw_standard_normal()).collect());
        t.push_str(
            "grp",
            (0..n).map(|i| if i % 2 == 0 { "a".into() } else { "b".into() }).collect(),
        );
        t.push_float("Y", (0..n).map(|_| gen.draw_standard_normal()).collect());
        let data = compile(&spec, &t).unwrap();
        let mut priors = default_priors(&spec, &data);
        priors.fe = crate::priors::FePrior {
            lambda: 1.0,
            a: 3.0,
            b: 2.0,
        };
        let mut rng = Rng::new(seed + 1);
        let init = theta_init(&mut rng, &priors, &spec, &data).unwrap();
        let chain = run_chain(&mut rng, &spec, &data, &priors, init, 12, 4, 0).unwrap();
        (chain, spec)
    }

    #[test]
    fn chain_round_trips_through_binary_file() {
        let (chain, _) = small_chain(31);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.bin");
        write_chain(&chain, &path).unwrap();
        let back = read_chain(&path).unwrap();
        assert_eq!(back, chain);

        let manifest = read_manifest(&path).unwrap();
        assert_eq!(manifest.n_draws, 8);
        assert_eq!(manifest.seed, chain.seed);
        assert_eq!(manifest.spec_fingerprint, chain.spec_fingerprint);
    }

    #[test]
    fn identical_seeds_give_byte_identical_files() {
        let (a, _) = small_chain(32);
        let (b, _) = small_chain(32);
        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a.bin");
        let pb = dir.path().join("b.bin");
        write_chain(&a, &pa).unwrap();
        write_chain(&b, &pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }

    #[test]
    fn trace_csv_has_one_row_per_draw() {
        let (chain, _) = small_chain(33);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&chain, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + chain.n_draws());
        assert!(lines[0].starts_with("iter,zeta,sigma2,beta_0"));
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTCHAIN").unwrap();
        assert!(matches!(
            read_chain(&path),
            Err(Error::InvalidChainFile(_))
        ));
    }

    #[test]
    fn fingerprint_is_stable_and_input_sensitive() {
        let (chain, spec) = small_chain(34);
        assert_eq!(fingerprint(&spec), chain.spec_fingerprint);
        let mut other = spec.clone();
        other.n_clusters_max = 4;
        assert_ne!(fingerprint(&other), chain.spec_fingerprint);
    }
}
