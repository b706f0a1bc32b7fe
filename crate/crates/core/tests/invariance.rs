//! Every Metropolis-corrected kernel leaves the target invariant; checked by
//! a Kolmogorov-Smirnov distance on a thinned one-dimensional chain.

use heavytail::diagnostics::ks_distance;
use heavytail::targets::Cdf1d;
use heavytail::{ChainState, Kernel, KernelConfig, RngStream, TargetSpec};

fn ks_after(kc: &KernelConfig, target: &TargetSpec, seed: u64) -> f64 {
    let kernel = Kernel::new(kc, target).unwrap();
    let mut st = ChainState::origin(target);
    let mut rng = RngStream::new(seed, 0);
    let mut kept = Vec::new();
    for i in 1..=300_000u32 {
        kernel.step(&mut st, target, &mut rng).unwrap();
        if i % 30 == 0 {
            kept.push(st.x[0]);
        }
    }
    let cdf = Cdf1d::new(target).unwrap();
    ks_distance(&kept, |a| cdf.cdf(a)).unwrap()
}

#[test]
fn metropolis_kernels_sample_the_target() {
    let t3 = TargetSpec::student_t(3.0, 1).unwrap();
    let cauchy = TargetSpec::student_t(1.0, 1).unwrap();
    let cases = [
        ("fv-rwm", KernelConfig::rwm_gaussian(2.4), t3),
        ("iv-rwm", KernelConfig::rwm_student_t(2.4, 0.5), cauchy),
        ("mala", KernelConfig::mala(1.0), t3),
        ("sps", KernelConfig::sps(1.0), cauchy),
        ("is", KernelConfig::independence(2.0), t3),
    ];
    for (i, (name, kc, target)) in cases.iter().enumerate() {
        let ks = ks_after(kc, target, 900 + i as u64);
        // 10^4 draws; i.i.d. 1% critical value is 0.016, looser for correlation
        assert!(ks < 0.03, "{name}: KS {ks}");
    }
}

#[test]
fn unadjusted_langevin_is_biased_at_large_steps() {
    let t3 = TargetSpec::student_t(3.0, 1).unwrap();
    let small = ks_after(&KernelConfig::ula(0.05), &t3, 950);
    let large = ks_after(&KernelConfig::ula(2.0), &t3, 951);
    assert!(small < 0.05, "{small}");
    assert!(large > 2.0 * small, "{large} vs {small}");
}
