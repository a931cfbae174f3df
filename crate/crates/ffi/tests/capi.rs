use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use ehfkt::dataio::{save_checkpoint, save_corpus, ResponseEvent, ResponseLog};
use ehfkt::kdes::save_knowledge;
use ehfkt::sfes::save_assignment;
use ehfkt::syngen::{gen_corpus, gen_responses, GenConfig};
use ehfkt::tracer::{predict_next, train_tracer, FeatureTable, TracerConfig, Variant};
use ehfkt_ffi::*;

fn last_error() -> String {
    let p = ehf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn auc_matches_hand_count() {
    let s = [0.1, 0.4, 0.35, 0.8];
    let l = [0u8, 0, 1, 1];
    let mut a = 0.0;
    assert_eq!(unsafe { ehf_auc(s.as_ptr(), l.as_ptr(), 4, &mut a) }, EhfStatus::Ok);
    assert_eq!(a, 0.75);
    assert!(ehf_last_error().is_null());

    let ties = [0.5; 4];
    assert_eq!(unsafe { ehf_auc(ties.as_ptr(), l.as_ptr(), 4, &mut a) }, EhfStatus::Ok);
    assert_eq!(a, 0.5);
}

#[test]
fn auc_errors_are_reported() {
    let mut a = 0.0;
    let l = [0u8, 1];
    assert_eq!(unsafe { ehf_auc(ptr::null(), l.as_ptr(), 2, &mut a) }, EhfStatus::NullPointer);
    assert!(last_error().contains("scores"));
    let s = [0.2, 0.3];
    let one_class = [1u8, 1];
    assert_eq!(unsafe { ehf_auc(s.as_ptr(), one_class.as_ptr(), 2, &mut a) }, EhfStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { ehf_auc(s.as_ptr(), l.as_ptr(), 2, ptr::null_mut()) }, EhfStatus::NullPointer);
}

#[test]
fn bkt_update_arithmetic() {
    let p = EhfBktParams {
        p_init: 0.5,
        p_learn: 0.1,
        p_guess: 0.2,
        p_slip: 0.1,
    };
    let (mut pc, mut next) = (0.0, 0.0);
    assert_eq!(unsafe { ehf_bkt_predict_update(&p, 0.5, 1, &mut pc, &mut next) }, EhfStatus::Ok);
    assert!((pc - 0.55).abs() < 1e-12);
    let post = 0.45 / 0.55;
    assert!((next - (post + (1.0 - post) * 0.1)).abs() < 1e-12);

    let bad = EhfBktParams { p_guess: 0.6, p_slip: 0.5, ..p };
    assert_eq!(
        unsafe { ehf_bkt_predict_update(&bad, 0.5, 1, &mut pc, &mut next) },
        EhfStatus::InvalidArgument
    );
    assert_eq!(unsafe { ehf_bkt_predict_update(&p, 0.5, 3, &mut pc, &mut next) }, EhfStatus::InvalidArgument);
}

#[test]
fn dendrogram_handle_lifecycle() {
    // two tight pairs pointing in orthogonal directions
    let v = [1.0, 0.0, 0.99, 0.05, 0.0, 1.0, 0.04, 0.98];
    let mut h: *mut EhfDendrogram = ptr::null_mut();
    assert_eq!(unsafe { ehf_dendrogram_new(v.as_ptr(), 4, 2, &mut h) }, EhfStatus::Ok);
    assert!(!h.is_null());
    let mut m = 0usize;
    assert_eq!(unsafe { ehf_dendrogram_num_merges(h, &mut m) }, EhfStatus::Ok);
    assert_eq!(m, 3);
    let mut last = f64::NEG_INFINITY;
    for i in 0..m {
        let (mut a, mut b, mut ht) = (0usize, 0usize, 0.0);
        assert_eq!(unsafe { ehf_dendrogram_merge(h, i, &mut a, &mut b, &mut ht) }, EhfStatus::Ok);
        assert!(ht >= last && a < b);
        last = ht;
    }
    let (mut a, mut b, mut ht) = (0usize, 0usize, 0.0);
    assert_eq!(unsafe { ehf_dendrogram_merge(h, 3, &mut a, &mut b, &mut ht) }, EhfStatus::InvalidArgument);

    let mut labels = [9usize; 4];
    assert_eq!(unsafe { ehf_dendrogram_cut(h, 2, labels.as_mut_ptr(), 4) }, EhfStatus::Ok);
    assert_eq!(labels[0], labels[1]);
    assert_eq!(labels[2], labels[3]);
    assert_ne!(labels[0], labels[2]);
    assert_eq!(unsafe { ehf_dendrogram_cut(h, 0, labels.as_mut_ptr(), 4) }, EhfStatus::InvalidArgument);
    assert_eq!(unsafe { ehf_dendrogram_cut(h, 2, labels.as_mut_ptr(), 3) }, EhfStatus::InvalidArgument);
    unsafe { ehf_dendrogram_free(h) };
    unsafe { ehf_dendrogram_free(ptr::null_mut()) };

    let mut h2: *mut EhfDendrogram = ptr::null_mut();
    assert_eq!(unsafe { ehf_dendrogram_new(v.as_ptr(), 0, 2, &mut h2) }, EhfStatus::InvalidArgument);
    assert!(h2.is_null());
    let nan = [f64::NAN, 1.0];
    assert_ne!(unsafe { ehf_dendrogram_new(nan.as_ptr(), 1, 2, &mut h2) }, EhfStatus::Ok);
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn tracer_predictions_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let gen = GenConfig {
        num_tags: 3,
        num_clusters: 4,
        num_exercises: 40,
        num_students: 30,
        seq_len: 12,
        ..GenConfig::default()
    };
    let (corpus, mut truth) = gen_corpus(&gen).unwrap();
    let logs = gen_responses(&gen, &corpus, &mut truth).unwrap();
    let (_, clusters) = ehfkt::sfes::cluster_corpus(&corpus, 4).unwrap();
    let knowledge: Vec<_> = corpus
        .records()
        .iter()
        .map(|r| {
            let mut v = vec![0.1; 3];
            v[r.knowledge_tag.unwrap()] = 0.8;
            ehfkt::kdes::KnowledgeLine {
                exercise_id: r.exercise_id.clone(),
                v,
            }
        })
        .collect();
    let table = FeatureTable::from_corpus(&corpus)
        .unwrap()
        .with_knowledge(&knowledge)
        .unwrap()
        .with_clusters(&clusters)
        .unwrap();
    let cfg = TracerConfig {
        variant: Variant::EhfktS,
        hidden: 4,
        epochs: 1,
        ..TracerConfig::default()
    };
    let trained = train_tracer(&cfg, &table, &logs, None).unwrap();

    let p = |n: &str| dir.path().join(n);
    save_corpus(&corpus, &p("ex.jsonl"), &p("emb.txt")).unwrap();
    save_assignment(&p("cl.jsonl"), &clusters).unwrap();
    save_knowledge(&p("kn.jsonl"), &knowledge).unwrap();
    save_checkpoint(&p("ck.json"), &trained.params.to_checkpoint("fp", &table)).unwrap();

    let mut h: *mut EhfTracer = ptr::null_mut();
    let st = unsafe {
        ehf_tracer_load(
            cstr(&p("ck.json")).as_ptr(),
            cstr(&p("ex.jsonl")).as_ptr(),
            cstr(&p("emb.txt")).as_ptr(),
            cstr(&p("kn.jsonl")).as_ptr(),
            cstr(&p("cl.jsonl")).as_ptr(),
            ptr::null(),
            &mut h,
        )
    };
    assert_eq!(st, EhfStatus::Ok, "{}", if st == EhfStatus::Ok { String::new() } else { last_error() });

    let log: &ResponseLog = &logs[0];
    let ids: Vec<CString> = log.events.iter().map(|e: &ResponseEvent| CString::new(e.exercise_id.as_str()).unwrap()).collect();
    let ptrs: Vec<*const c_char> = ids.iter().map(|c| c.as_ptr()).collect();
    let rs: Vec<u8> = log.events.iter().map(|e| e.correct).collect();
    for k in 1..log.events.len() {
        let mut got = 0.0;
        let next = &ids[k];
        assert_eq!(
            unsafe { ehf_tracer_predict_next(h, ptrs.as_ptr(), rs.as_ptr(), k, next.as_ptr(), &mut got) },
            EhfStatus::Ok
        );
        let hist: Vec<(&str, u8)> = log.events[..k].iter().map(|e| (e.exercise_id.as_str(), e.correct)).collect();
        let want = predict_next(&trained.params, &table, &hist, &log.events[k].exercise_id).unwrap();
        assert_eq!(got.to_bits(), want.to_bits());
    }
    let mut got = 0.0;
    let unknown = CString::new("nope").unwrap();
    assert_eq!(
        unsafe { ehf_tracer_predict_next(h, ptrs.as_ptr(), rs.as_ptr(), 1, unknown.as_ptr(), &mut got) },
        EhfStatus::Format
    );
    assert_eq!(
        unsafe { ehf_tracer_predict_next(h, ptrs.as_ptr(), rs.as_ptr(), 0, ids[0].as_ptr(), &mut got) },
        EhfStatus::InvalidArgument
    );
    unsafe { ehf_tracer_free(h) };

    // the cluster variant cannot load without its cluster file
    let mut h2: *mut EhfTracer = ptr::null_mut();
    let st = unsafe {
        ehf_tracer_load(
            cstr(&p("ck.json")).as_ptr(),
            cstr(&p("ex.jsonl")).as_ptr(),
            cstr(&p("emb.txt")).as_ptr(),
            ptr::null(),
            ptr::null(),
            ptr::null(),
            &mut h2,
        )
    };
    assert_ne!(st, EhfStatus::Ok);
    assert!(h2.is_null());
    assert_eq!(
        unsafe { ehf_tracer_load(ptr::null(), ptr::null(), ptr::null(), ptr::null(), ptr::null(), ptr::null(), &mut h2) },
        EhfStatus::NullPointer
    );
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ehf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ehfkt.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ehf_last_error",
        "ehf_version",
        "ehf_auc",
        "ehf_bkt_predict_update",
        "ehf_dendrogram_new",
        "ehf_dendrogram_num_merges",
        "ehf_dendrogram_merge",
        "ehf_dendrogram_cut",
        "ehf_dendrogram_free",
        "ehf_tracer_load",
        "ehf_tracer_predict_next",
        "ehf_tracer_free",
        "EHF_STATUS_OK",
        "typedef struct EhfTracer EhfTracer",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // compile the header as C when a compiler is around
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"ehfkt.h\"\nint main(void) { double a; EhfStatus s = ehf_auc(0, 0, 0, &a); return (int)s; }\n",
    )
    .unwrap();
    match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler; skipped syntax check"),
    }
}
