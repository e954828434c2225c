use mtcs_core::spectra::{empirical_dos, sample_matrix, EnsembleSpec, SpectralLaw};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Marchenko–Pastur CDF of `AᵀA` for `A` with `ρN × N` entries of variance
/// `1/N`, by direct integration of the density in the angle variable.
struct MpOracle {
    rho: f64,
    a: f64,
    b: f64,
    /// Cumulative continuous mass at `a + (b-a)(1-cos θ)/2` on a uniform θ grid.
    table: Vec<f64>,
}

impl MpOracle {
    const STEPS: usize = 200_000;

    fn new(rho: f64) -> Self {
        let (a, b) = ((1.0 - rho.sqrt()).powi(2), (1.0 + rho.sqrt()).powi(2));
        let h = std::f64::consts::PI / Self::STEPS as f64;
        let mut table = vec![0.0; Self::STEPS + 1];
        for k in 0..Self::STEPS {
            // midpoint rule; dx = (b-a)/2 sin θ dθ and sqrt((b-x)(x-a)) = (b-a)/2 sin θ
            let th = (k as f64 + 0.5) * h;
            let x = a + (b - a) * (1.0 - th.cos()) / 2.0;
            let s = (b - a) / 2.0 * th.sin();
            table[k + 1] = table[k] + s * s / (2.0 * std::f64::consts::PI * x) * h;
        }
        MpOracle { rho, a, b, table }
    }

    fn cdf(&self, x: f64) -> f64 {
        let atom = if self.rho < 1.0 && x >= 0.0 { 1.0 - self.rho } else { 0.0 };
        if x <= self.a {
            return atom;
        }
        if x >= self.b {
            return atom + self.table[Self::STEPS];
        }
        let th = (1.0 - 2.0 * (x - self.a) / (self.b - self.a)).acos();
        let pos = th / std::f64::consts::PI * Self::STEPS as f64;
        let k = (pos.floor() as usize).min(Self::STEPS - 1);
        let frac = pos - k as f64;
        atom + self.table[k] + frac * (self.table[k + 1] - self.table[k])
    }
}

fn mp(rho: f64) -> SpectralLaw {
    EnsembleSpec::iid_gaussian(rho).unwrap().law().unwrap()
}

#[test]
fn mp_oracle_carries_the_continuous_mass() {
    let o = MpOracle::new(0.5);
    assert!((o.table[MpOracle::STEPS] - 0.5).abs() < 1e-8);
    let law = mp(0.5);
    for x in [0.05, 0.2, 0.7, 1.5, 2.5] {
        assert!((o.cdf(x) - law.cdf(x)).abs() < 1e-6, "{x}");
    }
}

#[test]
fn gaussian_spectrum_is_close_to_marchenko_pastur() {
    let a = sample_matrix(&EnsembleSpec::iid_gaussian(0.5).unwrap(), 512, 11).unwrap();
    let dos = empirical_dos(&a).unwrap();
    let oracle = MpOracle::new(0.5);
    let ev = &dos.eigenvalues;
    let n = ev.len() as f64;
    // the atom at zero is compared as one jump, the continuous part pointwise
    let zeros = ev.iter().filter(|v| v.abs() < 1e-9).count();
    let atom_gap = (zeros as f64 / n - 0.5).abs();
    let ks = ev
        .iter()
        .enumerate()
        .skip(zeros)
        .map(|(i, v)| {
            let f = oracle.cdf(*v);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(atom_gap, f64::max);
    assert!(ks < 0.05, "{ks}");
    assert!(dos.kolmogorov_distance(|x| oracle.cdf(x)) < 0.05);
}

#[test]
fn gaussian_trace_concentrates() {
    let a = sample_matrix(&EnsembleSpec::iid_gaussian(0.5).unwrap(), 1024, 5).unwrap();
    let t = (a.transpose() * &a).trace() / 1024.0;
    assert!((0.45..=0.55).contains(&t), "{t}");
}

#[test]
fn small_row_orthogonal_matrix_is_a_projector() {
    let a = sample_matrix(&EnsembleSpec::row_orthogonal(0.5).unwrap(), 8, 2).unwrap();
    assert_eq!(a.shape(), (4, 8));
    assert!((&a * a.transpose() - DMatrix::identity(4, 4)).abs().max() < 1e-10);
    let ev = empirical_dos(&a).unwrap().eigenvalues;
    assert!(ev[..4].iter().all(|v| v.abs() < 1e-10));
    assert!(ev[4..].iter().all(|v| (v - 1.0).abs() < 1e-10));
}

#[test]
fn mean_eigenvalue_over_sampled_gramians() {
    for spec in [EnsembleSpec::iid_gaussian(0.5).unwrap(), EnsembleSpec::row_orthogonal(0.5).unwrap()] {
        let law = spec.law().unwrap();
        let mean = (0..20u64)
            .map(|s| {
                let a = sample_matrix(&spec, 1024, 100 + s).unwrap();
                a.iter().map(|x| x * x).sum::<f64>() / 1024.0
            })
            .sum::<f64>()
            / 20.0;
        assert!((law.r_transform(0.0).unwrap() - mean).abs() <= 1e-2, "{spec:?}");
    }
}

#[test]
fn gaussian_r_derivative_at_zero() {
    let law = mp(0.5);
    let h = 1e-4;
    let fd = (law.r_transform_numeric(h).unwrap() - law.r_transform_numeric(-h).unwrap()) / (2.0 * h);
    assert!((fd - 0.5).abs() < 1e-6, "{fd}");
    assert!((law.r_transform_derivative(0.0).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn matrix_r_transform_of_zero_is_the_mean() {
    let r = mp(0.5).matrix_r_transform(&DMatrix::zeros(3, 3)).unwrap();
    assert!((r - DMatrix::identity(3, 3) * 0.5).abs().max() < 1e-12);
}

fn orthogonal(seed: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, seed).qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stieltjes_increases_left_of_the_support(rho in 0.1f64..1.0, s1 in -50.0f64..-1e-3, gap in 1e-6f64..10.0) {
        let law = mp(rho);
        let s2 = (s1 + gap).min(law.support_min - 1e-9);
        prop_assume!(s1 < s2);
        prop_assert!(law.stieltjes(s1).unwrap() < law.stieltjes(s2).unwrap());
    }

    #[test]
    fn inversion_is_self_consistent(rho in 0.1f64..1.0, t in 0.0f64..1.0, named in any::<bool>()) {
        let law = if named {
            mp(rho)
        } else {
            EnsembleSpec::row_orthogonal(rho).unwrap().law().unwrap()
        };
        let (lo, hi) = law.omega_domain();
        let (lo, hi) = (lo.max(-20.0), hi.min(20.0));
        let omega = lo + (hi - lo) * (0.005 + 0.99 * t);
        prop_assume!(omega.abs() > 1e-9);
        let s = law.inverse_stieltjes(-omega).unwrap();
        prop_assert!((law.stieltjes(s).unwrap() + omega).abs() <= 1e-8);
    }

    #[test]
    fn matrix_r_transform_commutes_with_rotation(
        rho in 0.1f64..1.0,
        eig in prop::collection::vec(-0.5f64..0.3, 3),
        seed in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let q = orthogonal(&seed);
        prop_assume!((q.determinant().abs() - 1.0).abs() < 1e-9);
        let law = mp(rho);
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig));
        let rotated = &q * &s * q.transpose();
        let lhs = law.matrix_r_transform(&rotated).unwrap();
        let rhs = &q * law.matrix_r_transform(&s).unwrap() * q.transpose();
        prop_assert!((lhs - rhs).abs().max() <= 1e-8);
    }
}
