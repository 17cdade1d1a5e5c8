use std::ptr;

use jellium_ffi::*;

fn params(theta: f64) -> JlParams {
    JlParams {
        beta: 2.0,
        q: 1.0,
        rho: 1.0,
        w_width: 1.0,
        theta,
    }
}

fn domain(theta: f64) -> *mut JlDomain {
    let mut d = ptr::null_mut();
    assert_eq!(
        unsafe { jl_domain_new(&params(theta), 4, 4, &mut d) },
        JlStatus::Ok
    );
    d
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { jl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn domain_bounds() {
    let d = domain(0.25);
    let (mut l1, mut l2, mut lam) = (0.0, 0.0, 0.0);
    assert_eq!(
        unsafe { jl_domain_bounds(d, &mut l1, &mut l2, &mut lam) },
        JlStatus::Ok
    );
    assert_eq!((l1, l2, lam), (-4.25, 3.75, 1.0));
    assert_eq!(unsafe { jl_domain_particle_count(d) }, 8);
    unsafe { jl_domain_free(d) };
}

#[test]
fn invalid_theta_reports_message() {
    let mut d = ptr::null_mut();
    let s = unsafe { jl_domain_new(&params(1.0), 4, 4, &mut d) };
    assert_eq!(s, JlStatus::InvalidParameter);
    assert!(d.is_null());
    assert!(last_error().contains("theta"));
}

#[test]
fn null_pointers_are_rejected() {
    let s = unsafe { jl_domain_new(ptr::null(), 4, 4, &mut ptr::null_mut()) };
    assert_eq!(s, JlStatus::NullPointer);
    assert_eq!(
        unsafe { jl_v2(0.0, 0.0, 1.0, 1.0, ptr::null_mut()) },
        JlStatus::NullPointer
    );
    unsafe { jl_domain_free(ptr::null_mut()) };
}

#[test]
fn potentials_split_into_long_and_short_range() {
    let (mut v, mut v2) = (0.0, 0.0);
    unsafe {
        assert_eq!(jl_v_pair(0.3, 0.1, 1.1, 0.7, 1.0, &mut v), JlStatus::Ok);
        assert_eq!(jl_v2(0.1, 0.7, 0.8, 1.0, &mut v2), JlStatus::Ok);
    }
    assert!((v - (-0.8 / 2.0 + v2)).abs() < 1e-12);
    let s = unsafe { jl_v2(0.2, 0.2, 0.0, 1.0, &mut v2) };
    assert_eq!(s, JlStatus::SingularKernel);
}

#[test]
fn energy_of_lattice_and_out_of_domain() {
    let d = domain(0.0);
    let xs: Vec<f64> = (0..8).map(|j| -4.0 + j as f64 + 0.5).collect();
    let ys = [0.5; 8];
    let mut e = JlEnergy {
        u1: 0.0,
        v2_total: 0.0,
        total: 0.0,
    };
    unsafe {
        assert_eq!(
            jl_energy(d, xs.as_ptr(), ys.as_ptr(), 8, 0, &mut e),
            JlStatus::Ok
        );
    }
    // Each cell contributes q^2/(2W) * 1/12.
    assert!((e.u1 - 8.0 / 24.0).abs() < 1e-12);
    assert!((e.total - e.u1 - e.v2_total).abs() < 1e-12);
    let bad = [5.0; 8];
    let s = unsafe { jl_energy(d, bad.as_ptr(), ys.as_ptr(), 8, 0, &mut e) };
    assert_eq!(s, JlStatus::OutOfDomain);
    unsafe { jl_domain_free(d) };
}

#[test]
fn kfield_values() {
    let d = domain(0.0);
    let xs = [0.5, -3.5, -2.5, -1.5, -0.5, 1.5, 2.5, 3.5];
    let mut k = ptr::null_mut();
    let (mut at0, mut left, mut int) = (f64::NAN, f64::NAN, f64::NAN);
    unsafe {
        assert_eq!(
            jl_kfield_new(d, xs.as_ptr(), xs.len(), &mut k),
            JlStatus::Ok
        );
        assert_eq!(jl_kfield_eval(k, 0.0, 0, &mut at0), JlStatus::Ok);
        assert_eq!(jl_kfield_eval(k, 0.5, 1, &mut left), JlStatus::Ok);
        assert_eq!(jl_kfield_integral(k, -4.0, 4.0, 2, &mut int), JlStatus::Ok);
        assert_eq!(jl_kfield_eval(k, 9.0, 0, &mut at0), JlStatus::OutOfDomain);
        assert_eq!(
            jl_kfield_integral(k, 0.0, 1.0, 3, &mut int),
            JlStatus::InvalidParameter
        );
        jl_kfield_free(k);
        jl_domain_free(d);
    }
    assert!(at0.abs() < 1e-12);
    assert!((left - 0.5).abs() < 1e-12);
}

#[test]
fn chain_is_deterministic_and_keeps_energy() {
    let d = domain(0.0);
    let sp = JlSamplerParams {
        sigma_x: 0.5,
        sigma_y: 0.25,
        seed: 7,
        pure1d: 0,
    };
    let run = || {
        let mut c = ptr::null_mut();
        let mut acc = 0;
        let mut xs = [0.0; 8];
        let mut ys = [0.0; 8];
        unsafe {
            assert_eq!(jl_chain_new(d, &sp, &mut c), JlStatus::Ok);
            assert_eq!(jl_chain_step(c, 5000, &mut acc), JlStatus::Ok);
            assert_eq!(
                jl_chain_positions(c, xs.as_mut_ptr(), ys.as_mut_ptr(), 4),
                JlStatus::BufferTooSmall
            );
            assert_eq!(
                jl_chain_positions(c, xs.as_mut_ptr(), ys.as_mut_ptr(), 8),
                JlStatus::Ok
            );
            jl_chain_free(c);
        }
        (acc, xs, ys)
    };
    let (a, xa, ya) = run();
    let (b, xb, yb) = run();
    assert!(a > 0 && a < 5000);
    assert_eq!((a, xa, ya), (b, xb, yb));
    assert!(xa.windows(2).all(|w| w[0] < w[1]));
    unsafe { jl_domain_free(d) };
}
