use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use fpld_ffi::*;

fn last_error() -> String {
    let p = fpld_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn quantizer_round_trip_and_errors() {
    unsafe {
        let mut q = ptr::null_mut();
        assert_eq!(fpld_quantizer_new(1.0, 1, &mut q), FpldStatus::Ok);
        assert!(fpld_last_error_message().is_null());
        assert_eq!(fpld_quantizer_step(q), 1.0);

        let x = [0.0, -1.0, 0.2];
        let u = [0.0, 0.0, 0.25];
        let mut idx = [0u32; 3];
        let mut r = [0.0; 3];
        let mut clipped = 9usize;
        let s = fpld_quantizer_encode(q, x.as_ptr(), u.as_ptr(), 3, idx.as_mut_ptr(), r.as_mut_ptr(), &mut clipped);
        assert_eq!(s, FpldStatus::Ok);
        assert_eq!(idx, [1, 0, 1]);
        assert_eq!(clipped, 0);
        assert_eq!(r[0], 0.5);

        let mut back = [0.0; 3];
        assert_eq!(fpld_quantizer_decode(q, idx.as_ptr(), u.as_ptr(), 3, back.as_mut_ptr()), FpldStatus::Ok);
        assert_eq!(back, r);

        // dither outside the cell
        let bad = [0.0, 0.0, 0.75];
        let s =
            fpld_quantizer_encode(q, x.as_ptr(), bad.as_ptr(), 3, idx.as_mut_ptr(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(s, FpldStatus::InvalidDither);
        assert!(last_error().contains("dither"));

        let s =
            fpld_quantizer_encode(q, ptr::null(), u.as_ptr(), 3, idx.as_mut_ptr(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(s, FpldStatus::NullPointer);
        fpld_quantizer_free(q);
        fpld_quantizer_free(ptr::null_mut());

        assert_eq!(fpld_quantizer_new(0.0, 2, &mut q), FpldStatus::InvalidParameter);
        assert!(fpld_quantizer_step(ptr::null()).is_nan());
    }
}

#[test]
fn dither_matches_the_library_stream() {
    let mut a = [0.0; 16];
    unsafe {
        assert_eq!(fpld_dither_fill(5, 2, 1, 3, 0.25, a.as_mut_ptr(), 16), FpldStatus::Ok);
        assert_eq!(fpld_dither_fill(5, 2, 1, 3, -1.0, a.as_mut_ptr(), 16), FpldStatus::InvalidParameter);
    }
    let expect = fpld::quant::DitherStream::new(5, 2, 1).dither(3, 0.25, 16);
    assert_eq!(a.to_vec(), expect);
}

#[test]
fn payload_pack_reports_needed_size() {
    let h = FpldPayloadHeader {
        node_id: 1,
        round: 1,
        probe_count: 2,
        vocab: 3,
        bits_per_coord: 3,
        clip: 4.0,
        dither_seed: 11,
    };
    let idx = [0u32, 7, 3, 1, 6, 2];
    let mut n = 0usize;
    let mut small = [0u8; 4];
    unsafe {
        let s = fpld_payload_pack(&h, idx.as_ptr(), 6, small.as_mut_ptr(), small.len(), &mut n);
        assert_eq!(s, FpldStatus::BufferTooSmall);
        assert_eq!(n, fpld_payload_header_len() + 3);
        let mut buf = vec![0u8; n];
        assert_eq!(fpld_payload_pack(&h, idx.as_ptr(), 6, buf.as_mut_ptr(), n, &mut n), FpldStatus::Ok);

        let mut h2 = std::mem::zeroed::<FpldPayloadHeader>();
        let mut out = [0u32; 6];
        let mut count = 0usize;
        assert_eq!(fpld_payload_unpack(buf.as_ptr(), n, &mut h2, out.as_mut_ptr(), 6, &mut count), FpldStatus::Ok);
        assert_eq!((h2, count, out), (h, 6, idx));

        assert_eq!(
            fpld_payload_unpack(buf.as_ptr(), n - 1, &mut h2, out.as_mut_ptr(), 6, &mut count),
            FpldStatus::Protocol
        );
        let s = fpld_payload_pack(&h, idx.as_ptr(), 5, buf.as_mut_ptr(), n, &mut n);
        assert_eq!(s, FpldStatus::Encoding);
    }
}

#[test]
fn divergences() {
    let logits = [0.3, -0.1, 0.0, 1.2];
    let eta = [0.01, -0.02, 0.0, 0.005];
    let mut p = [0.0; 4];
    let mut q = [0.0; 4];
    let shifted: Vec<f64> = logits.iter().zip(&eta).map(|(a, b)| a + b).collect();
    let (mut direct, mut cumulant) = (0.0, 0.0);
    unsafe {
        assert_eq!(fpld_softmax(logits.as_ptr(), 4, p.as_mut_ptr()), FpldStatus::Ok);
        assert_eq!(fpld_softmax(shifted.as_ptr(), 4, q.as_mut_ptr()), FpldStatus::Ok);
        assert_eq!(fpld_kl(p.as_ptr(), q.as_ptr(), 4, &mut direct), FpldStatus::Ok);
        assert_eq!(fpld_cumulant_kl(logits.as_ptr(), eta.as_ptr(), 4, &mut cumulant), FpldStatus::Ok);
        let zero = [0.5, 0.5, 0.0, 0.0];
        assert_eq!(fpld_kl(p.as_ptr(), zero.as_ptr(), 4, &mut direct), FpldStatus::InfiniteDivergence);
    }
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!((cumulant / fpld::softmax::kl(&p, &q).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn bounds_through_handle() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(fpld_bound_params_new(4, 256, &mut p), FpldStatus::Ok);
        let mut est = std::mem::zeroed::<FpldBoundEstimates>();
        // no budget set yet
        assert_eq!(fpld_bounds_upper(p, &mut est), FpldStatus::InvalidParameter);

        assert_eq!(fpld_bound_params_set(p, c"B".as_ptr(), 1024.0), FpldStatus::Ok);
        assert_eq!(fpld_bounds_upper(p, &mut est), FpldStatus::Ok);
        assert!((est.bandwidth_term - 2f64.powi(-8) / 24.0).abs() < 1e-15);
        let mut lower = 0.0;
        assert_eq!(fpld_bounds_lower(p, &mut lower), FpldStatus::Ok);
        assert!((lower - est.bandwidth_term / 2.0).abs() < 1e-15);

        assert_eq!(fpld_bound_params_set(p, c"T".as_ptr(), 2.0), FpldStatus::Ok);
        let (mut v, mut rem) = (0.0, 0.0);
        assert_eq!(fpld_bounds_multiround(p, &mut v, &mut rem), FpldStatus::Ok);
        assert!((v - 2f64.powi(-16) / 24.0).abs() < 1e-18);

        assert_eq!(fpld_bound_params_set(p, c"T".as_ptr(), 1.5), FpldStatus::InvalidParameter);
        assert_eq!(fpld_bound_params_set(p, c"vocab".as_ptr(), 1.0), FpldStatus::InvalidParameter);
        assert!(last_error().contains("vocab"));

        let bl = [256.0, 256.0, 768.0, 768.0];
        assert_eq!(fpld_bound_params_set_b_list(p, bl.as_ptr(), 4), FpldStatus::Ok);
        assert_eq!(fpld_bounds_upper(p, &mut est), FpldStatus::Ok);
        assert!((est.bandwidth_term - (0.5 + 2.0 / 64.0) / 96.0).abs() < 1e-15);
        assert_eq!(fpld_bounds_lower(p, &mut lower), FpldStatus::Heterogeneous);
        fpld_bound_params_free(p);
    }
}

#[test]
fn allocation_handle() {
    let w = [1.0, 1.0, 16.0, 16.0];
    unsafe {
        let mut a = ptr::null_mut();
        assert_eq!(fpld_allocate(w.as_ptr(), 4, 2048.0, 256, f64::NAN, FpldPolicy::Optimal, &mut a), FpldStatus::Ok);
        assert_eq!(fpld_allocation_len(a), 4);
        let mut real = [0.0; 4];
        assert_eq!(fpld_allocation_real(a, real.as_mut_ptr(), 4), FpldStatus::Ok);
        for (r, e) in real.iter().zip([256.0, 256.0, 768.0, 768.0]) {
            assert!((r - e).abs() < 1e-9);
        }
        let mut bits = [0u8; 4];
        assert_eq!(fpld_allocation_integer(a, bits.as_mut_ptr(), ptr::null_mut(), 4), FpldStatus::Ok);
        assert_eq!(bits, [1, 1, 3, 3]);
        assert_eq!(fpld_allocation_real(a, real.as_mut_ptr(), 3), FpldStatus::BufferTooSmall);
        let (mut f, mut fi) = (0.0, 0.0);
        assert_eq!(fpld_allocation_objective(a, &mut f, &mut fi), FpldStatus::Ok);
        assert!((f - fi).abs() < 1e-15);
        fpld_allocation_free(a);

        let s = fpld_allocate(w.as_ptr(), 4, 2048.0, 256, 100.0, FpldPolicy::Uniform, &mut a);
        assert_eq!(s, FpldStatus::Infeasible);
        assert_eq!(fpld_allocation_len(ptr::null()), 0);
    }
}

#[test]
fn simulation_matches_library() {
    let text = c"K = 2\nm = 8\nV = 32\nbits = 3\n";
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(fpld_sim_config_from_toml(text.as_ptr(), &mut c), FpldStatus::Ok);
        let mut kl = 0.0;
        let mut clipped = 0usize;
        assert_eq!(fpld_sim_run(c, 3, &mut kl, &mut clipped), FpldStatus::Ok);
        let cfg = fpld::config::sim_from_toml(text.to_str().unwrap()).unwrap();
        let o = fpld::sim::run(&cfg, 3).unwrap();
        assert_eq!((kl, clipped), (o.kl, o.clipped));
        fpld_sim_config_free(c);

        assert_eq!(fpld_sim_config_from_toml(c"K = 0".as_ptr(), &mut c), FpldStatus::InvalidParameter);
        assert_eq!(fpld_sim_config_from_toml(c"K = ".as_ptr(), &mut c), FpldStatus::InvalidInput);
    }
}

#[test]
fn errors_are_per_thread() {
    unsafe {
        let mut q = ptr::null_mut();
        assert_eq!(fpld_quantizer_new(-1.0, 1, &mut q), FpldStatus::InvalidParameter);
    }
    std::thread::spawn(|| assert!(fpld_last_error_message().is_null())).join().unwrap();
    assert!(!fpld_last_error_message().is_null());
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(fpld_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compile the C smoke program against the generated header and the static
/// library. Skipped when no C compiler is on PATH.
#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/fpld.h");
    assert!(header.exists(), "build script did not write {}", header.display());

    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler ({cc})");
        return;
    }
    // target/<profile>/deps/abi-<hash> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libfpld_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new(&cc)
        .args(["-std=c11", "-Wall", "-Wextra", "-Werror", "-o"])
        .arg(&bin)
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
