//! Scenario definition, validation, file ingestion, and the canonical
//! built-in scenarios (Rabi oscillation, von Neumann measurement pulse,
//! diagonal null case).
//!
//! A scenario file is a UTF-8 JSON document; complex numbers are `[re, im]`
//! pairs and matrices are row-major at the full dimension `dim_c * dim_r`.
//! Branch labels are free-form strings; their order in the file assigns
//! branch indices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    inner_product, CompositeSpace, HermitianOperator, StateVector, CONSTRUCTION_TOL,
};

/// Tolerance for schedule contiguity checks.
const SCHEDULE_TOL: f64 = 1e-12;

/// Orthonormal basis `{|φ_n⟩}` of the conscious-subsystem space `S_C`.
///
/// One branch per basis vector; the basis is complete over `S_C`.
#[derive(Debug, Clone)]
pub struct ExperienceBasis {
    space: CompositeSpace,
    vectors: Vec<StateVector>,
}

impl ExperienceBasis {
    /// Validates pairwise orthonormality to 1e-10 and completeness
    /// (`vectors.len() == dim_c`).
    pub fn new(space: CompositeSpace, vectors: Vec<StateVector>) -> Result<Self> {
        if vectors.len() != space.dim_c() {
            return Err(Error::Validation {
                field: "experience_basis",
                reason: format!(
                    "need {} basis vectors for dim_c = {}, got {}",
                    space.dim_c(),
                    space.dim_c(),
                    vectors.len()
                ),
            });
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.dim() != space.dim_c() {
                return Err(Error::DimensionMismatch {
                    context: "experience basis vector",
                    expected: space.dim_c(),
                    got: v.dim(),
                });
            }
            for (j, w) in vectors.iter().enumerate().take(i + 1) {
                let ip = inner_product(w, v)?;
                let target = if i == j { 1.0 } else { 0.0 };
                let dev = (ip - Complex64::new(target, 0.0)).norm();
                if dev > CONSTRUCTION_TOL {
                    return Err(Error::NotOrthonormal { i: j, j: i, dev });
                }
            }
        }
        Ok(Self { space, vectors })
    }

    /// Standard basis `{e_0, ..., e_{dim_c - 1}}`.
    pub fn standard(space: CompositeSpace) -> Self {
        let vectors = (0..space.dim_c())
            .map(|k| StateVector::basis(space.dim_c(), k))
            .collect();
        Self { space, vectors }
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn vectors(&self) -> &[StateVector] {
        &self.vectors
    }

    pub fn vector(&self, n: usize) -> &StateVector {
        &self.vectors[n]
    }

    /// Number of branches (equals `dim_c`).
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Orthogonal decomposition of the full space into labeled branch subspaces.
#[derive(Debug, Clone)]
pub struct ProjectorFamily {
    projectors: Vec<HermitianOperator>,
    labels: Vec<String>,
}

impl ProjectorFamily {
    /// Validates idempotence, pairwise orthogonality, and completeness,
    /// each to 1e-10 in max norm.
    pub fn new(projectors: Vec<HermitianOperator>, labels: Vec<String>) -> Result<Self> {
        if projectors.is_empty() {
            return Err(Error::InvalidProjectorFamily {
                reason: "family must contain at least one projector".into(),
            });
        }
        if labels.len() != projectors.len() {
            return Err(Error::InvalidProjectorFamily {
                reason: format!(
                    "{} labels for {} projectors",
                    labels.len(),
                    projectors.len()
                ),
            });
        }
        let dim = projectors[0].dim();
        for p in &projectors {
            if p.dim() != dim {
                return Err(Error::InvalidProjectorFamily {
                    reason: "projectors have mixed dimensions".into(),
                });
            }
        }
        let max_entry_norm = |m: &DMatrix<Complex64>| -> f64 {
            m.iter().map(|z| z.norm()).fold(0.0, f64::max)
        };
        let mut sum = DMatrix::<Complex64>::zeros(dim, dim);
        for (m, p) in projectors.iter().enumerate() {
            let sq = p.entries() * p.entries();
            let dev = max_entry_norm(&(&sq - p.entries()));
            if dev > CONSTRUCTION_TOL {
                return Err(Error::InvalidProjectorFamily {
                    reason: format!("projector {m} is not idempotent (max dev {dev:.3e})"),
                });
            }
            for (n, q) in projectors.iter().enumerate().take(m) {
                let prod = p.entries() * q.entries();
                let dev = max_entry_norm(&prod);
                if dev > CONSTRUCTION_TOL {
                    return Err(Error::InvalidProjectorFamily {
                        reason: format!(
                            "projectors {n} and {m} are not orthogonal (max dev {dev:.3e})"
                        ),
                    });
                }
            }
            sum += p.entries();
        }
        let dev = max_entry_norm(&(&sum - DMatrix::<Complex64>::identity(dim, dim)));
        if dev > CONSTRUCTION_TOL {
            return Err(Error::InvalidProjectorFamily {
                reason: format!("family is not complete (max |ΣΠ - I| = {dev:.3e})"),
            });
        }
        Ok(Self { projectors, labels })
    }

    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.projectors[0].dim()
    }

    pub fn projector(&self, m: usize) -> &HermitianOperator {
        &self.projectors[m]
    }

    pub fn projectors(&self) -> &[HermitianOperator] {
        &self.projectors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Builds the family `Π_n = |φ_n⟩⟨φ_n| ⊗ I` over the full space, with
/// branch indices as labels.
pub fn projectors_from_basis(
    basis: &ExperienceBasis,
    space: &CompositeSpace,
) -> Result<ProjectorFamily> {
    let labels = (0..basis.len()).map(|n| n.to_string()).collect();
    projectors_from_basis_labeled(basis, space, labels)
}

/// Same as [`projectors_from_basis`] with caller-supplied branch labels.
pub fn projectors_from_basis_labeled(
    basis: &ExperienceBasis,
    space: &CompositeSpace,
    labels: Vec<String>,
) -> Result<ProjectorFamily> {
    if basis.space() != space {
        return Err(Error::DimensionMismatch {
            context: "projectors_from_basis",
            expected: space.dim_c(),
            got: basis.space().dim_c(),
        });
    }
    let dim = space.dim();
    let mut projectors = Vec::with_capacity(basis.len());
    for phi in basis.vectors() {
        let mut entries = DMatrix::<Complex64>::zeros(dim, dim);
        for c1 in 0..space.dim_c() {
            for c2 in 0..space.dim_c() {
                let coeff = phi.amplitudes()[c1] * phi.amplitudes()[c2].conj();
                if coeff.norm() == 0.0 {
                    continue;
                }
                for r in 0..space.dim_r() {
                    entries[(space.index(c1, r), space.index(c2, r))] = coeff;
                }
            }
        }
        projectors.push(HermitianOperator::new(entries)?);
    }
    ProjectorFamily::new(projectors, labels)
}

/// How the initial branch of a trajectory is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchInit {
    /// Sample from the Born weights of the initial state.
    Born,
    /// Start from a fixed branch index.
    Fixed(usize),
}

/// One piecewise-constant span of the Hamiltonian schedule.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub hamiltonian: HermitianOperator,
}

/// A validated simulation scenario.
///
/// Immutable after construction; shareable across threads.
#[derive(Debug, Clone)]
pub struct Model {
    space: CompositeSpace,
    schedule: Vec<Segment>,
    initial_state: StateVector,
    basis: ExperienceBasis,
    initial_branch: BranchInit,
    t_max: f64,
    hbar: f64,
    labels: Vec<String>,
}

impl Model {
    /// Validates all invariants: contiguous schedule covering `[0, t_max]`,
    /// consistent dimensions, normalized initial state, complete basis,
    /// one label per branch. Segment boundaries within 1e-12 of contiguity
    /// are snapped exact.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        space: CompositeSpace,
        schedule: Vec<Segment>,
        initial_state: StateVector,
        basis: ExperienceBasis,
        initial_branch: BranchInit,
        t_max: f64,
        hbar: f64,
        labels: Vec<String>,
    ) -> Result<Self> {
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(Error::Validation {
                field: "hbar",
                reason: format!("must be a positive finite number, got {hbar}"),
            });
        }
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::Validation {
                field: "t_max",
                reason: format!("must be a positive finite number, got {t_max}"),
            });
        }
        if schedule.is_empty() {
            return Err(Error::Validation {
                field: "hamiltonians",
                reason: "schedule must contain at least one segment".into(),
            });
        }
        let mut snapped = Vec::with_capacity(schedule.len());
        let mut cursor = 0.0;
        let last = schedule.len() - 1;
        for (i, seg) in schedule.into_iter().enumerate() {
            if (seg.t_start - cursor).abs() > SCHEDULE_TOL {
                return Err(Error::Validation {
                    field: "hamiltonians",
                    reason: format!(
                        "segment {i} starts at {} but the schedule requires {cursor} \
                         (contiguous, non-overlapping coverage of [0, t_max])",
                        seg.t_start
                    ),
                });
            }
            let t_end = if i == last && (seg.t_end - t_max).abs() <= SCHEDULE_TOL {
                t_max
            } else {
                seg.t_end
            };
            if t_end <= cursor {
                return Err(Error::Validation {
                    field: "hamiltonians",
                    reason: format!("segment {i} has non-positive length"),
                });
            }
            if seg.hamiltonian.dim() != space.dim() {
                return Err(Error::DimensionMismatch {
                    context: "schedule hamiltonian",
                    expected: space.dim(),
                    got: seg.hamiltonian.dim(),
                });
            }
            snapped.push(Segment {
                t_start: cursor,
                t_end,
                hamiltonian: seg.hamiltonian,
            });
            cursor = t_end;
        }
        if (cursor - t_max).abs() > SCHEDULE_TOL {
            return Err(Error::Validation {
                field: "hamiltonians",
                reason: format!("schedule ends at {cursor}, expected t_max = {t_max}"),
            });
        }
        if initial_state.dim() != space.dim() {
            return Err(Error::DimensionMismatch {
                context: "initial_state",
                expected: space.dim(),
                got: initial_state.dim(),
            });
        }
        let norm_dev = (initial_state.norm_squared() - 1.0).abs();
        if norm_dev > CONSTRUCTION_TOL {
            return Err(Error::NotNormalized {
                dev: norm_dev,
                tol: CONSTRUCTION_TOL,
            });
        }
        if basis.space() != &space {
            return Err(Error::Validation {
                field: "experience_basis",
                reason: "basis space does not match the model space".into(),
            });
        }
        if labels.len() != space.dim_c() {
            return Err(Error::Validation {
                field: "labels",
                reason: format!(
                    "need one label per branch ({}), got {}",
                    space.dim_c(),
                    labels.len()
                ),
            });
        }
        if let BranchInit::Fixed(i) = initial_branch {
            if i >= space.dim_c() {
                return Err(Error::Validation {
                    field: "initial_branch",
                    reason: format!("branch index {i} out of range (dim_c = {})", space.dim_c()),
                });
            }
        }
        Ok(Self {
            space,
            schedule: snapped,
            initial_state,
            basis,
            initial_branch,
            t_max,
            hbar,
            labels,
        })
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn schedule(&self) -> &[Segment] {
        &self.schedule
    }

    pub fn initial_state(&self) -> &StateVector {
        &self.initial_state
    }

    pub fn basis(&self) -> &ExperienceBasis {
        &self.basis
    }

    pub fn initial_branch(&self) -> BranchInit {
        self.initial_branch
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of branches (equals `dim_c`).
    pub fn n_branches(&self) -> usize {
        self.space.dim_c()
    }

    /// Index of the schedule segment containing `t`. Boundary times belong
    /// to the later segment, except `t_max` which belongs to the last.
    pub fn segment_index_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                t_max: self.t_max,
            });
        }
        let idx = self
            .schedule
            .partition_point(|seg| seg.t_end <= t)
            .min(self.schedule.len() - 1);
        Ok(idx)
    }

    /// Projector family `Π_n = |φ_n⟩⟨φ_n| ⊗ I` carrying this model's labels.
    pub fn projector_family(&self) -> Result<ProjectorFamily> {
        projectors_from_basis_labeled(&self.basis, &self.space, self.labels.clone())
    }
}

// --- scenario file (de)serialization ---

fn default_hbar() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct ScenarioSegment {
    t_start: f64,
    t_end: f64,
    matrix: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InitialBranchField {
    Index(usize),
    Policy(String),
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    dim_c: usize,
    dim_r: usize,
    #[serde(default = "default_hbar")]
    hbar: f64,
    hamiltonians: Vec<ScenarioSegment>,
    initial_state: Vec<[f64; 2]>,
    experience_basis: Vec<Vec<[f64; 2]>>,
    initial_branch: InitialBranchField,
    t_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

fn pairs_to_state(pairs: &[[f64; 2]]) -> Result<StateVector> {
    StateVector::new(pairs.iter().map(|p| Complex64::new(p[0], p[1])).collect())
}

fn matrix_from_rows(rows: &[Vec<[f64; 2]>], dim: usize) -> Result<HermitianOperator> {
    if rows.len() != dim {
        return Err(Error::Validation {
            field: "matrix",
            reason: format!("expected {dim} rows, got {}", rows.len()),
        });
    }
    let mut flat = Vec::with_capacity(dim * dim);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Validation {
                field: "matrix",
                reason: format!("row {i} has {} entries, expected {dim}", row.len()),
            });
        }
        flat.extend(row.iter().map(|p| Complex64::new(p[0], p[1])));
    }
    match HermitianOperator::from_rows(dim, &flat) {
        Ok(h) => Ok(h),
        Err(Error::NotHermitian { .. }) => Err(Error::Validation {
            field: "hamiltonians",
            reason: "hamiltonian not Hermitian".into(),
        }),
        Err(e) => Err(e),
    }
}

fn state_to_pairs(v: &StateVector) -> Vec<[f64; 2]> {
    v.amplitudes().iter().map(|z| [z.re, z.im]).collect()
}

/// Parses and validates a scenario JSON document.
pub fn load_model(file_contents: &str) -> Result<Model> {
    let raw: ScenarioFile = serde_json::from_str(file_contents)
        .map_err(|e| Error::Parse(format!("{e} (line {}, column {})", e.line(), e.column())))?;
    let space = CompositeSpace::new(raw.dim_c, raw.dim_r)?;
    let schedule = raw
        .hamiltonians
        .iter()
        .map(|seg| {
            Ok(Segment {
                t_start: seg.t_start,
                t_end: seg.t_end,
                hamiltonian: matrix_from_rows(&seg.matrix, space.dim())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let initial_state = pairs_to_state(&raw.initial_state)?;
    let basis_vectors = raw
        .experience_basis
        .iter()
        .map(|row| pairs_to_state(row))
        .collect::<Result<Vec<_>>>()?;
    let basis = ExperienceBasis::new(space, basis_vectors)?;
    let initial_branch = match raw.initial_branch {
        InitialBranchField::Index(i) => BranchInit::Fixed(i),
        InitialBranchField::Policy(ref s) if s == "born" => BranchInit::Born,
        InitialBranchField::Policy(s) => {
            return Err(Error::Validation {
                field: "initial_branch",
                reason: format!("expected a branch index or \"born\", got \"{s}\""),
            });
        }
    };
    let labels = raw
        .labels
        .unwrap_or_else(|| (0..raw.dim_c).map(|n| n.to_string()).collect());
    Model::new(
        space,
        schedule,
        initial_state,
        basis,
        initial_branch,
        raw.t_max,
        raw.hbar,
        labels,
    )
}

/// Serializes a model back to scenario JSON. `load_model ∘ serialize_model`
/// is the identity up to 1e-12 per numeric field.
pub fn serialize_model(model: &Model) -> String {
    let file = ScenarioFile {
        dim_c: model.space.dim_c(),
        dim_r: model.space.dim_r(),
        hbar: model.hbar,
        hamiltonians: model
            .schedule
            .iter()
            .map(|seg| ScenarioSegment {
                t_start: seg.t_start,
                t_end: seg.t_end,
                matrix: (0..seg.hamiltonian.dim())
                    .map(|i| {
                        (0..seg.hamiltonian.dim())
                            .map(|j| {
                                let z = seg.hamiltonian.entry(i, j);
                                [z.re, z.im]
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect(),
        initial_state: state_to_pairs(&model.initial_state),
        experience_basis: model.basis.vectors().iter().map(state_to_pairs).collect(),
        initial_branch: match model.initial_branch {
            BranchInit::Born => InitialBranchField::Policy("born".into()),
            BranchInit::Fixed(i) => InitialBranchField::Index(i),
        },
        t_max: model.t_max,
        labels: Some(model.labels.clone()),
    };
    serde_json::to_string_pretty(&file).expect("scenario serialization cannot fail")
}

// --- built-in scenarios ---

/// Two-level Rabi testbed: `H = ħω σ_x`, initial state `e_0`, standard
/// experience basis, `t_max = 2π/ω`. The Born weight of branch 1 at time
/// `t` is `sin²(ωt)`.
pub fn built_in_rabi(omega: f64) -> Result<Model> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::InvalidParameter {
            name: "omega",
            reason: format!("must be positive, got {omega}"),
        });
    }
    let hbar = 1.0;
    let space = CompositeSpace::new(2, 1)?;
    let z = Complex64::new(0.0, 0.0);
    let x = Complex64::new(hbar * omega, 0.0);
    let h = HermitianOperator::from_rows(2, &[z, x, x, z])?;
    let t_max = 2.0 * std::f64::consts::PI / omega;
    Model::new(
        space,
        vec![Segment {
            t_start: 0.0,
            t_end: t_max,
            hamiltonian: h,
        }],
        StateVector::basis(2, 0),
        ExperienceBasis::standard(space),
        BranchInit::Born,
        t_max,
        hbar,
        vec!["0".into(), "1".into()],
    )
}

/// Von Neumann measurement as a strong finite pulse.
///
/// The measured system (`S_R`, dimension N) starts in `Σ_n c_n |n⟩`; the
/// observer (`S_C`, dimension N+1) starts in `|ready⟩`. The coupling
/// `H = g Σ_n (|ready⟩⟨saw n| + |saw n⟩⟨ready|) ⊗ |n⟩⟨n|` runs for
/// `τ = π/(2g)`, after which the state is `Σ_n (-i) c_n |saw n⟩|n⟩` and the
/// branch weights are `|c_n|²`.
pub fn built_in_measurement(c: &[Complex64], g: f64) -> Result<Model> {
    let n_outcomes = c.len();
    if n_outcomes < 2 {
        return Err(Error::InvalidParameter {
            name: "c",
            reason: format!("need at least 2 outcome amplitudes, got {n_outcomes}"),
        });
    }
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::InvalidParameter {
            name: "g",
            reason: format!("coupling must be positive, got {g}"),
        });
    }
    let total: f64 = c.iter().map(|z| z.norm_sqr()).sum();
    if (total - 1.0).abs() > CONSTRUCTION_TOL {
        return Err(Error::NotNormalized {
            dev: (total - 1.0).abs(),
            tol: CONSTRUCTION_TOL,
        });
    }
    let space = CompositeSpace::new(n_outcomes + 1, n_outcomes)?;
    let dim = space.dim();
    let mut entries = DMatrix::<Complex64>::zeros(dim, dim);
    let coupling = Complex64::new(g, 0.0);
    for n in 1..=n_outcomes {
        let ready = space.index(0, n - 1);
        let saw = space.index(n, n - 1);
        entries[(ready, saw)] = coupling;
        entries[(saw, ready)] = coupling;
    }
    let h = HermitianOperator::new(entries)?;
    let mut amps = vec![Complex64::new(0.0, 0.0); dim];
    for (n, cn) in c.iter().enumerate() {
        amps[space.index(0, n)] = *cn;
    }
    let tau = std::f64::consts::FRAC_PI_2 / g;
    let mut labels = vec!["ready".to_string()];
    labels.extend((1..=n_outcomes).map(|n| format!("saw {n}")));
    Model::new(
        space,
        vec![Segment {
            t_start: 0.0,
            t_end: tau,
            hamiltonian: h,
        }],
        StateVector::normalized(amps)?,
        ExperienceBasis::standard(space),
        BranchInit::Born,
        tau,
        1.0,
        labels,
    )
}

/// Null case: `H` diagonal in the experience basis, so the probability
/// current vanishes and no jumps ever occur.
pub fn built_in_diagonal() -> Result<Model> {
    let space = CompositeSpace::new(2, 1)?;
    let z = Complex64::new(0.0, 0.0);
    let h = HermitianOperator::from_rows(
        2,
        &[Complex64::new(1.0, 0.0), z, z, Complex64::new(-1.0, 0.0)],
    )?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let t_max = 2.0 * std::f64::consts::PI;
    Model::new(
        space,
        vec![Segment {
            t_start: 0.0,
            t_end: t_max,
            hamiltonian: h,
        }],
        StateVector::normalized(vec![Complex64::new(s, 0.0), Complex64::new(s, 0.0)])?,
        ExperienceBasis::standard(space),
        BranchInit::Born,
        t_max,
        1.0,
        vec!["0".into(), "1".into()],
    )
}
