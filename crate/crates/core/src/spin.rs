//! Donor spin Hamiltonian `H/hbar = gamma_e B0 Sz + A S.I`, its exact
//! diagonalization and the ESR transition table.
//!
//! Basis ordering is the product basis `|mS> (x) |mI>` with both projections
//! ascending, i.e. index `iS * (2I + 1) + iI` where `iS = mS + S`.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constants::{hz, materials};
use crate::error::{ensure_finite, Error, Result};
use crate::numerics::brent_root;

pub type C64 = Complex<f64>;

/// Field range searched by [`transition_field`] unless told otherwise.
pub const DEFAULT_B_MAX: f64 = 50e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSystem {
    pub electron_spin: f64,
    pub nuclear_spin: f64,
    /// Hyperfine constant A, rad/s.
    pub hyperfine_a: f64,
    /// Electron gyromagnetic ratio, rad/s/T.
    pub gamma_e: f64,
    #[serde(default)]
    pub include_nuclear_zeeman: bool,
    /// Nuclear gyromagnetic ratio, rad/s/T; enters as `-gamma_n B0 Iz`.
    #[serde(default)]
    pub gamma_n: f64,
}

impl Default for SpinSystem {
    fn default() -> Self {
        Self::bismuth()
    }
}

impl SpinSystem {
    /// Bismuth donor in silicon with the bundled constants.
    pub fn bismuth() -> Self {
        let m = materials();
        Self {
            electron_spin: 0.5,
            nuclear_spin: m.bismuth.nuclear_spin,
            hyperfine_a: hz(m.bismuth.hyperfine_a_hz),
            gamma_e: hz(m.electron.gamma_e_hz_per_t),
            include_nuclear_zeeman: false,
            gamma_n: hz(m.bismuth.gamma_n_hz_per_t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("electron_spin", self.electron_spin),
            ("nuclear_spin", self.nuclear_spin),
            ("hyperfine_a", self.hyperfine_a),
            ("gamma_e", self.gamma_e),
            ("gamma_n", self.gamma_n),
        ] {
            ensure_finite(name, v)?;
        }
        for (name, j) in [
            ("electron_spin", self.electron_spin),
            ("nuclear_spin", self.nuclear_spin),
        ] {
            if j <= 0.0 || (2.0 * j).fract() != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be a positive half-integer, got {j}"
                )));
            }
        }
        if self.hyperfine_a <= 0.0 || self.gamma_e <= 0.0 {
            return Err(Error::InvalidInput("hyperfine_a and gamma_e must be > 0".into()));
        }
        Ok(())
    }

    fn mult(j: f64) -> usize {
        (2.0 * j).round() as usize + 1
    }

    pub fn dim(&self) -> usize {
        Self::mult(self.electron_spin) * Self::mult(self.nuclear_spin)
    }

    /// Gap between the two lowest-lying hyperfine manifolds at zero field,
    /// `A (I + 1/2)` for `S = 1/2`.
    pub fn zero_field_splitting(&self) -> f64 {
        let f_hi = self.nuclear_spin + self.electron_spin;
        let f_lo = f_hi - 1.0;
        0.5 * self.hyperfine_a * (f_hi * (f_hi + 1.0) - f_lo * (f_lo + 1.0))
    }

    /// Electron `Sx` in the product basis.
    pub fn sx(&self) -> DMatrix<C64> {
        let (_, sp) = spin_matrices(self.electron_spin);
        let ident = DMatrix::<f64>::identity(Self::mult(self.nuclear_spin), Self::mult(self.nuclear_spin));
        let sx = (&sp + sp.transpose()) * 0.5;
        to_complex(&sx.kronecker(&ident))
    }

    /// Total `Fz = Sz + Iz` in the product basis.
    pub fn fz(&self) -> DMatrix<C64> {
        let (sz, _) = spin_matrices(self.electron_spin);
        let (iz, _) = spin_matrices(self.nuclear_spin);
        let is = DMatrix::<f64>::identity(sz.nrows(), sz.nrows());
        let ii = DMatrix::<f64>::identity(iz.nrows(), iz.nrows());
        to_complex(&(sz.kronecker(&ii) + is.kronecker(&iz)))
    }

    /// Diagonalizes the Hamiltonian and labels each level by `(F, mF)`.
    pub fn levels(&self, b0: f64, delta_a: f64) -> Result<EnergyLevels> {
        let h = build_hamiltonian(self, b0, delta_a)?;
        let eig = eigensystem(&h)?;
        EnergyLevels::from_eigensystem(*self, b0, delta_a, eig)
    }
}

/// `(Jz, J+)` for spin `j` with `m` ascending.
pub fn spin_matrices(j: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = SpinSystem::mult(j);
    let mut jz = DMatrix::zeros(n, n);
    let mut jp = DMatrix::zeros(n, n);
    for k in 0..n {
        let m = -j + k as f64;
        jz[(k, k)] = m;
        if k + 1 < n {
            jp[(k + 1, k)] = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
        }
    }
    (jz, jp)
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

/// `H/hbar = gamma_e B0 Sz + (A + delta_a) S.I` (plus `-gamma_n B0 Iz` when
/// enabled), in rad/s.
pub fn build_hamiltonian(sys: &SpinSystem, b0: f64, delta_a: f64) -> Result<DMatrix<C64>> {
    sys.validate()?;
    ensure_finite("B0", b0)?;
    ensure_finite("delta_A", delta_a)?;
    if b0 < 0.0 {
        return Err(Error::InvalidInput(format!("B0 must be >= 0, got {b0}")));
    }
    let a = sys.hyperfine_a + delta_a;
    if a <= 0.0 {
        return Err(Error::InvalidInput(format!("A + delta_A must be > 0, got {a}")));
    }
    let (sz, sp) = spin_matrices(sys.electron_spin);
    let (iz, ip) = spin_matrices(sys.nuclear_spin);
    let is = DMatrix::<f64>::identity(sz.nrows(), sz.nrows());
    let ii = DMatrix::<f64>::identity(iz.nrows(), iz.nrows());
    let sm = sp.transpose();
    let im = ip.transpose();
    let s_dot_i = sz.kronecker(&iz) + (sp.kronecker(&im) + sm.kronecker(&ip)) * 0.5;
    let mut h = sz.kronecker(&ii) * (sys.gamma_e * b0) + s_dot_i * a;
    if sys.include_nuclear_zeeman {
        h -= is.kronecker(&iz) * (sys.gamma_n * b0);
    }
    Ok(to_complex(&h))
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub energies: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

/// Relative energy tolerance below which levels are treated as degenerate.
const DEGENERACY_TOL: f64 = 1e-9;

/// Exact diagonalization of a Hermitian matrix with deterministic output.
///
/// Energies ascend. Inside a degenerate subspace the basis is rebuilt by
/// pivoted Gram-Schmidt on the product states: the state with the largest
/// remaining overlap goes first, ties to the lower index. Every vector is
/// phased so that its largest component is real and positive.
pub fn eigensystem(h: &DMatrix<C64>) -> Result<Eigensystem> {
    let n = h.nrows();
    if n == 0 || h.ncols() != n {
        return Err(Error::InvalidInput(
            "eigensystem needs a non-empty square matrix".into(),
        ));
    }
    let scale = h.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if !scale.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let deviation = (h - h.adjoint()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let tolerance = 1e-10 * scale.max(f64::MIN_POSITIVE);
    if deviation > tolerance {
        return Err(Error::NonHermitian { deviation, tolerance });
    }
    let herm = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::<C64>::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }

    let gap_tol = DEGENERACY_TOL * scale.max(f64::MIN_POSITIVE);
    for (start, end) in degenerate_clusters(&energies, gap_tol) {
        if end - start > 1 {
            canonicalize_subspace(&mut vectors, start, end);
        }
    }
    for col in 0..n {
        fix_phase(&mut vectors, col);
    }
    Ok(Eigensystem { energies, vectors })
}

fn degenerate_clusters(energies: &[f64], tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=energies.len() {
        if k == energies.len() || energies[k] - energies[k - 1] > tol {
            out.push((start, k));
            start = k;
        }
    }
    out
}

fn canonicalize_subspace(vectors: &mut DMatrix<C64>, start: usize, end: usize) {
    let n = vectors.nrows();
    let k = end - start;
    let sub = vectors.columns(start, k).into_owned();
    let mut chosen: Vec<nalgebra::DVector<C64>> = Vec::with_capacity(k);
    let mut used = vec![false; n];
    while chosen.len() < k {
        // Residual projection of every unused product state.
        let mut best: Option<(usize, f64, nalgebra::DVector<C64>)> = None;
        for i in 0..n {
            if used[i] {
                continue;
            }
            let mut v = nalgebra::DVector::<C64>::zeros(n);
            for c in 0..k {
                v += sub.column(c) * sub[(i, c)].conj();
            }
            for u in &chosen {
                let ov = u[i].conj();
                v -= u * ov;
            }
            let norm = v.norm();
            let better = match &best {
                None => true,
                Some((_, bn, _)) => norm > bn + 1e-12,
            };
            if better {
                best = Some((i, norm, v));
            }
        }
        let (i, norm, v) = best.expect("subspace has fewer product states than its dimension");
        used[i] = true;
        if norm < 1e-8 {
            continue;
        }
        chosen.push(v / C64::new(norm, 0.0));
    }
    for (c, v) in chosen.into_iter().enumerate() {
        vectors.set_column(start + c, &v);
    }
}

fn fix_phase(vectors: &mut DMatrix<C64>, col: usize) {
    let column = vectors.column(col);
    let max = column.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let pivot = column.iter().position(|z| z.norm() >= max - 1e-12).unwrap_or(0);
    let z = column[pivot];
    if z.norm() > 0.0 {
        let phase = z.conj() / z.norm();
        vectors.column_mut(col).iter_mut().for_each(|c| *c *= phase);
    }
}

/// Low-field quantum numbers of a level. `F` is exact as an adiabatic label
/// because `H` conserves `mF` and levels of equal `mF` never cross.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelLabel {
    pub f: f64,
    pub m_f: f64,
}

impl LevelLabel {
    fn key(&self) -> (i64, i64) {
        ((2.0 * self.f).round() as i64, (2.0 * self.m_f).round() as i64)
    }
}

#[derive(Debug, Clone)]
pub struct EnergyLevels {
    pub system: SpinSystem,
    pub field_b0: f64,
    pub delta_a: f64,
    /// Angular frequencies, ascending.
    pub energies: Vec<f64>,
    /// Columns are the eigenstates in the product basis.
    pub eigenvectors: DMatrix<C64>,
    pub labels: Vec<LevelLabel>,
}

impl EnergyLevels {
    fn from_eigensystem(system: SpinSystem, b0: f64, delta_a: f64, eig: Eigensystem) -> Result<Self> {
        let Eigensystem {
            mut energies,
            mut vectors,
        } = eig;
        let fz = system.fz();
        let n = energies.len();
        let mut m_f: Vec<f64> = (0..n)
            .map(|c| {
                let v = vectors.column(c);
                let exp = (v.adjoint() * &fz * v)[(0, 0)].re;
                (2.0 * exp).round() / 2.0
            })
            .collect();

        // Degenerate multiplets: order by mF ascending.
        let scale = energies.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        for (start, end) in degenerate_clusters(&energies, DEGENERACY_TOL * scale.max(f64::MIN_POSITIVE)) {
            if end - start < 2 {
                continue;
            }
            let mut idx: Vec<usize> = (start..end).collect();
            idx.sort_by(|&a, &b| m_f[a].total_cmp(&m_f[b]));
            let cols: Vec<_> = idx.iter().map(|&k| vectors.column(k).into_owned()).collect();
            let ms: Vec<f64> = idx.iter().map(|&k| m_f[k]).collect();
            let es: Vec<f64> = idx.iter().map(|&k| energies[k]).collect();
            for (off, col) in cols.into_iter().enumerate() {
                vectors.set_column(start + off, &col);
                m_f[start + off] = ms[off];
                energies[start + off] = es[off];
            }
        }

        // Rank within each mF sector gives F, starting from max(|I - S|, |mF|).
        let s = system.electron_spin;
        let i = system.nuclear_spin;
        let mut labels = vec![LevelLabel { f: 0.0, m_f: 0.0 }; n];
        let mut sectors: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (k, m) in m_f.iter().enumerate() {
            sectors.entry((2.0 * m).round() as i64).or_default().push(k);
        }
        for (key, members) in sectors {
            let m = key as f64 / 2.0;
            let f_min = (i - s).abs().max(m.abs());
            for (rank, &k) in members.iter().enumerate() {
                labels[k] = LevelLabel {
                    f: f_min + rank as f64,
                    m_f: m,
                };
            }
        }
        Ok(Self {
            system,
            field_b0: b0,
            delta_a,
            energies,
            eigenvectors: vectors,
            labels,
        })
    }

    pub fn index_of(&self, label: LevelLabel) -> Option<usize> {
        self.labels.iter().position(|l| l.key() == label.key())
    }

    /// `Sx` in the eigenbasis.
    pub fn sx_eigenbasis(&self) -> DMatrix<C64> {
        self.eigenvectors.adjoint() * self.system.sx() * &self.eigenvectors
    }
}

/// Closed-form Breit-Rabi energies for `S = 1/2`, ascending (rad/s).
pub fn breit_rabi(sys: &SpinSystem, b0: f64) -> Result<Vec<f64>> {
    sys.validate()?;
    ensure_finite("B0", b0)?;
    if sys.electron_spin != 0.5 {
        return Err(Error::InvalidInput(format!(
            "Breit-Rabi formula needs S = 1/2, got {}",
            sys.electron_spin
        )));
    }
    let i = sys.nuclear_spin;
    let a = sys.hyperfine_a;
    let gn = if sys.include_nuclear_zeeman { sys.gamma_n } else { 0.0 };
    let splitting = a * (i + 0.5);
    let x = (sys.gamma_e + gn) * b0 / splitting;
    let mut out = Vec::with_capacity(sys.dim());
    let m_max = i + 0.5;
    let steps = (2.0 * m_max).round() as i64;
    for k in 0..=steps {
        let m = -m_max + k as f64;
        let common = -a / 4.0 - gn * b0 * m;
        if (m.abs() - m_max).abs() < 1e-12 {
            out.push(common + 0.5 * splitting * (1.0 + m.signum() * x));
        } else {
            let root = (1.0 + 2.0 * m * x / (i + 0.5) + x * x).sqrt();
            out.push(common + 0.5 * splitting * root);
            out.push(common - 0.5 * splitting * root);
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionComponent {
    pub level_low: usize,
    pub level_high: usize,
    pub frequency: f64,
    pub sx_element: f64,
}

/// One ESR line: the set of inter-manifold transitions that share a low-field
/// frequency. The representative (largest `Sx`) component supplies the
/// headline fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionLine {
    pub id: usize,
    pub level_low: usize,
    pub level_high: usize,
    pub label_low: LevelLabel,
    pub label_high: LevelLabel,
    /// rad/s
    pub frequency: f64,
    pub sx_element: f64,
    /// d(frequency)/dA, dimensionless.
    pub dfreq_da: f64,
    pub components: Vec<TransitionComponent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionTable {
    pub b0: f64,
    pub entries: Vec<TransitionLine>,
}

impl TransitionTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["transition_id", "B0_T", "freq_Hz", "sx_elem", "dfreq_dA"])?;
        for e in &self.entries {
            wr.write_record([
                e.id.to_string(),
                format!("{:.17e}", self.b0),
                format!("{:.17e}", e.frequency / crate::constants::TWO_PI),
                format!("{:.17e}", e.sx_element),
                format!("{:.17e}", e.dfreq_da),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Relative finite-difference step on A for `dfreq_dA`.
const DA_STEP: f64 = 1e-6;

/// ESR lines of `levels` with `|<i|Sx|j>| >= threshold`.
///
/// Pairs inside one hyperfine manifold are dropped; inter-manifold pairs are
/// grouped by `(F_low, F_high, mF_low + mF_high)`, which fixes their common
/// low-field frequency. Lines are numbered by ascending `mF` sum, so line 0 is
/// the lowest-frequency line at small positive field.
pub fn transitions(levels: &EnergyLevels, threshold: f64) -> Result<TransitionTable> {
    if !(threshold > 0.0 && threshold < 0.5) {
        return Err(Error::InvalidInput(format!(
            "threshold must lie in (0, 0.5), got {threshold}"
        )));
    }
    let sys = levels.system;
    let sx = levels.sx_eigenbasis();
    let n = levels.energies.len();
    let freq_floor = DEGENERACY_TOL * sys.zero_field_splitting();
    let mut groups: BTreeMap<(i64, i64, i64), Vec<TransitionComponent>> = BTreeMap::new();
    for lo in 0..n {
        for hi in lo + 1..n {
            let f = levels.energies[hi] - levels.energies[lo];
            let el = sx[(lo, hi)].norm();
            let (llo, lhi) = (levels.labels[lo], levels.labels[hi]);
            if f <= freq_floor || el < threshold || llo.key().0 == lhi.key().0 {
                continue;
            }
            let key = (llo.key().0, lhi.key().0, llo.key().1 + lhi.key().1);
            groups.entry(key).or_default().push(TransitionComponent {
                level_low: lo,
                level_high: hi,
                frequency: f,
                sx_element: el,
            });
        }
    }

    let h = DA_STEP * sys.hyperfine_a;
    let plus = sys.levels(levels.field_b0, levels.delta_a + h)?;
    let minus = sys.levels(levels.field_b0, levels.delta_a - h)?;
    let freq_of = |lv: &EnergyLevels, lo: LevelLabel, hi: LevelLabel| -> Result<f64> {
        match (lv.index_of(lo), lv.index_of(hi)) {
            (Some(a), Some(b)) => Ok(lv.energies[b] - lv.energies[a]),
            _ => Err(Error::NotFound("level label lost under hyperfine shift".into())),
        }
    };

    let mut entries = Vec::with_capacity(groups.len());
    for (id, (_, mut comps)) in groups.into_iter().enumerate() {
        comps.sort_by_key(|a| (a.level_low, a.level_high));
        let rep = comps
            .iter()
            .fold(None::<&TransitionComponent>, |best, c| match best {
                Some(b) if b.sx_element >= c.sx_element => Some(b),
                _ => Some(c),
            })
            .expect("groups are non-empty")
            .clone();
        let label_low = levels.labels[rep.level_low];
        let label_high = levels.labels[rep.level_high];
        let dfreq_da = (freq_of(&plus, label_low, label_high)? - freq_of(&minus, label_low, label_high)?) / (2.0 * h);
        entries.push(TransitionLine {
            id,
            level_low: rep.level_low,
            level_high: rep.level_high,
            label_low,
            label_high,
            frequency: rep.frequency,
            sx_element: rep.sx_element,
            dfreq_da,
            components: comps,
        });
    }
    Ok(TransitionTable {
        b0: levels.field_b0,
        entries,
    })
}

/// Frequency of the transition between two labelled levels.
pub fn line_frequency(sys: &SpinSystem, low: LevelLabel, high: LevelLabel, b0: f64, delta_a: f64) -> Result<f64> {
    let lv = sys.levels(b0, delta_a)?;
    match (lv.index_of(low), lv.index_of(high)) {
        (Some(a), Some(b)) => Ok(lv.energies[b] - lv.energies[a]),
        _ => Err(Error::NotFound(format!("levels {low:?} / {high:?} not present"))),
    }
}

/// Field at which the line `low -> high` is resonant with `f_target` (rad/s),
/// searched on `[0, b_max]`; accurate to 1 Hz in frequency.
pub fn transition_field(sys: &SpinSystem, low: LevelLabel, high: LevelLabel, f_target: f64, b_max: f64) -> Result<f64> {
    ensure_finite("f_target", f_target)?;
    if !(b_max > 0.0) {
        return Err(Error::InvalidInput("b_max must be > 0".into()));
    }
    let ftol = hz(0.5);
    let g = |b: f64| -> Result<f64> { Ok(line_frequency(sys, low, high, b, 0.0)? - f_target) };
    let n_grid = 200;
    let mut b_prev = 0.0;
    let mut g_prev = g(0.0)?;
    if g_prev.abs() <= ftol {
        return Ok(0.0);
    }
    for k in 1..=n_grid {
        let b = b_max * k as f64 / n_grid as f64;
        let gb = g(b)?;
        if gb.abs() <= ftol {
            return Ok(b);
        }
        if gb.signum() != g_prev.signum() {
            return brent_root(g, b_prev, b, 1e-15, ftol, 200);
        }
        b_prev = b;
        g_prev = gb;
    }
    Err(Error::NotFound(format!(
        "line {:?}->{:?} does not reach {:.6e} Hz for B0 in [0, {b_max:e}] T",
        low,
        high,
        f_target / crate::constants::TWO_PI
    )))
}
