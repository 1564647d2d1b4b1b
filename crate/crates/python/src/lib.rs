//! Python bindings: structures, the fold oracle, the decoder policy and the
//! scalar pieces of the preference losses.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pepdpo::geometry::{self, Point};
use pepdpo::policy::{self, DecodingOrder, Featurized, Hyper, PolicyParams};
use pepdpo::seeds::rng_for;
use pepdpo::train::{self, Pair, PairOrders, PenaltySign};
use pepdpo::{analysis, dataset, Error, Sequence};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ Error::NumericAbort { .. } => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn seq(s: &str) -> PyResult<Sequence> {
    s.parse().map_err(to_py)
}

fn seqs(v: &[String]) -> PyResult<Vec<Sequence>> {
    v.iter().map(|s| seq(s)).collect()
}

/// A Cα backbone.
#[pyclass(name = "Structure", module = "pepdpo_py", frozen)]
struct PyStructure {
    inner: geometry::Structure,
}

#[pymethods]
impl PyStructure {
    #[new]
    fn new(id: &str, coords: Vec<[f64; 3]>) -> PyResult<Self> {
        let coords = coords.into_iter().map(|[x, y, z]| Point::new(x, y, z)).collect();
        Ok(Self {
            inner: geometry::Structure::new(id, coords).map_err(to_py)?,
        })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn coords(&self) -> Vec<[f64; 3]> {
        self.inner.coords.iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Structure({:?}, L={})", self.inner.id, self.inner.len())
    }
}

/// Folds a sequence with the deterministic torsion-table oracle.
#[pyfunction]
fn fold(sequence: &str) -> PyResult<PyStructure> {
    Ok(PyStructure {
        inner: geometry::fold(&seq(sequence)?).map_err(to_py)?,
    })
}

#[pyfunction]
fn tm_score(reference: &PyStructure, model: &PyStructure) -> PyResult<f64> {
    geometry::tm_score(&reference.inner, &model.inner).map_err(to_py)
}

#[pyfunction]
fn kabsch_rmsd(a: &PyStructure, b: &PyStructure) -> PyResult<f64> {
    Ok(geometry::kabsch_rmsd(&a.inner, &b.inner).map_err(to_py)?.rmsd)
}

/// TM-score between `structure` and the fold of `sequence`.
#[pyfunction]
fn reward(structure: &PyStructure, sequence: &str) -> PyResult<f64> {
    geometry::reward(&structure.inner, &seq(sequence)?).map_err(to_py)
}

/// `n` random prompts as `(structure, native)` tuples.
#[pyfunction]
#[pyo3(signature = (n, min_len=10, max_len=30, seed=0))]
fn gen_prompts(n: usize, min_len: usize, max_len: usize, seed: u64) -> PyResult<Vec<(PyStructure, String)>> {
    let prompts = dataset::gen_prompts(n, min_len..=max_len, seed, "s").map_err(to_py)?;
    Ok(prompts
        .into_iter()
        .map(|p| (PyStructure { inner: p.structure }, p.native.to_string()))
        .collect())
}

/// Decoder parameters.
#[pyclass(name = "Policy", module = "pepdpo_py", frozen)]
struct PyPolicy {
    inner: PolicyParams,
}

fn order_for(len: usize, order: Option<Vec<usize>>) -> PyResult<DecodingOrder> {
    match order {
        Some(perm) => DecodingOrder::new(perm).map_err(to_py),
        None => Ok(DecodingOrder::identity(len)),
    }
}

#[pymethods]
impl PyPolicy {
    /// Random initialization; `zeros=True` gives the uniform policy.
    #[staticmethod]
    #[pyo3(signature = (seed=0, hidden=64, k_neighbors=8, embed_dim=16, n_rbf=16, zeros=false))]
    fn init(seed: u64, hidden: usize, k_neighbors: usize, embed_dim: usize, n_rbf: usize, zeros: bool) -> PyResult<Self> {
        let hyper = Hyper {
            hidden,
            k_neighbors,
            embed_dim,
            n_rbf,
        };
        hyper.validate().map_err(to_py)?;
        let inner = if zeros {
            PolicyParams::zeros(hyper)
        } else {
            PolicyParams::init(hyper, &mut rng_for(seed, 0))
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: pepdpo::pipeline::load_checkpoint(path.as_ref()).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        pepdpo::pipeline::save_checkpoint(path.as_ref(), &self.inner).map_err(to_py)
    }

    fn checksum(&self) -> String {
        self.inner.checksum()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Total log-probability; the identity order when `order` is omitted.
    #[pyo3(signature = (structure, sequence, order=None))]
    fn logprob(&self, structure: &PyStructure, sequence: &str, order: Option<Vec<usize>>) -> PyResult<f64> {
        let y = seq(sequence)?;
        let order = order_for(y.len(), order)?;
        Ok(policy::logprob(&self.inner, &structure.inner, &y, &order).map_err(to_py)?.total)
    }

    /// Samples one sequence, returning it with its realized log-probability.
    #[pyo3(signature = (structure, temperature=1.0, seed=0, fixed_order=false))]
    fn sample(&self, structure: &PyStructure, temperature: f64, seed: u64, fixed_order: bool) -> PyResult<(String, f64)> {
        let (y, lp) = policy::sample(&self.inner, &structure.inner, temperature, &mut rng_for(seed, 0), fixed_order)
            .map_err(to_py)?;
        Ok((y.to_string(), lp.total))
    }
}

#[pyfunction]
fn neg_log_sigmoid(z: f64) -> f64 {
    train::neg_log_sigmoid(z)
}

fn parse_sign(sign: &str) -> PyResult<PenaltySign> {
    match sign {
        "loser_minus_winner" => Ok(PenaltySign::LoserMinusWinner),
        "winner_minus_loser" => Ok(PenaltySign::WinnerMinusLoser),
        other => Err(PyValueError::new_err(format!("unknown penalty sign {other:?}"))),
    }
}

/// Margin shift of the entropy penalty from snapshot log-probabilities.
#[pyfunction]
#[pyo3(signature = (alpha, logprob_winner, logprob_loser, sign="loser_minus_winner"))]
fn entropy_shift(alpha: f64, logprob_winner: f64, logprob_loser: f64, sign: &str) -> PyResult<f64> {
    Ok(train::entropy_shift(parse_sign(sign)?, alpha, logprob_winner, logprob_loser))
}

/// Margin shift of the diversity penalty against cached samples.
#[pyfunction]
#[pyo3(signature = (alpha, samples, winner, loser, sign="loser_minus_winner"))]
fn diversity_shift(alpha: f64, samples: Vec<String>, winner: &str, loser: &str, sign: &str) -> PyResult<f64> {
    let samples = seqs(&samples)?;
    let pw = train::diversity_penalty(&samples, &seq(winner)?).map_err(to_py)?;
    let pl = train::diversity_penalty(&samples, &seq(loser)?).map_err(to_py)?;
    Ok(parse_sign(sign)?.shift(alpha, pw, pl))
}

/// Standard DPO loss of one pair, with identity decoding orders.
#[pyfunction]
fn dpo_loss(theta: &PyPolicy, reference: &PyPolicy, structure: &PyStructure, winner: &str, loser: &str, beta: f64) -> PyResult<f64> {
    let (w, l) = (seq(winner)?, seq(loser)?);
    let x = Featurized::new(structure.inner.clone(), &theta.inner.hyper());
    let pairs = [Pair {
        prompt: &x,
        prompt_index: 0,
        winner: &w,
        loser: &l,
        mean_reward: 1.0,
    }];
    let orders = [PairOrders::single(DecodingOrder::identity(w.len()), DecodingOrder::identity(l.len()))];
    Ok(train::dpo_loss(&theta.inner, &reference.inner, &pairs, &orders, beta).map_err(to_py)?.loss)
}

/// Mean pairwise Hamming fraction.
#[pyfunction]
fn diversity(samples: Vec<String>) -> PyResult<f64> {
    analysis::diversity(&seqs(&samples)?).map_err(to_py)
}

#[pyfunction]
fn recovery(native: &str, sample: &str) -> PyResult<f64> {
    analysis::recovery(&seq(native)?, &seq(sample)?).map_err(to_py)
}

#[pyfunction]
fn rank_correlation(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    analysis::rank_correlation(&a, &b).map_err(to_py)
}

/// Vasicek differential-entropy estimate; `-inf` for a point mass.
#[pyfunction]
fn vasicek(samples: Vec<f64>) -> PyResult<f64> {
    Ok(analysis::vasicek(&samples).map_err(to_py)?.value)
}

#[pymodule]
fn pepdpo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStructure>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(fold, m)?)?;
    m.add_function(wrap_pyfunction!(tm_score, m)?)?;
    m.add_function(wrap_pyfunction!(kabsch_rmsd, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(gen_prompts, m)?)?;
    m.add_function(wrap_pyfunction!(neg_log_sigmoid, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_shift, m)?)?;
    m.add_function(wrap_pyfunction!(diversity_shift, m)?)?;
    m.add_function(wrap_pyfunction!(dpo_loss, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(recovery, m)?)?;
    m.add_function(wrap_pyfunction!(rank_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(vasicek, m)?)?;
    Ok(())
}
