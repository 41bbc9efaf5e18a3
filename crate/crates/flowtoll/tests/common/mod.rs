//! Shared fixtures and the enumerable instance corpus used by the
//! integration suites.
//!
//! Each test binary imports the pieces it needs, so the rest would trip the
//! dead-code lint.
#![allow(dead_code)]

use flowtoll::cli_io::{generate_instance, parse_instance, GenFamily, GenKind, InstanceDoc};
use flowtoll::game_core::{Edge, Latency, RoutingInstance};

pub fn pigou(n: usize) -> RoutingInstance {
    RoutingInstance::new(
        vec!["s".into(), "t".into()],
        vec![Edge { tail: 0, head: 1 }, Edge { tail: 0, head: 1 }],
        vec![Latency::Affine { a: 1.0, b: 0.0 }, Latency::constant(2.0)],
        vec![(0, 1); n],
    )
    .unwrap()
    .0
}

pub fn pigou2_text() -> &'static str {
    "flowtoll-instance v1\n\
     vertex s\n\
     vertex t\n\
     edge s t affine 1 0\n\
     edge s t const 2\n\
     demand s t\n\
     demand s t\n\
     opt 1.5\n"
}

pub fn braess(n: usize) -> RoutingInstance {
    RoutingInstance::new(
        vec!["s".into(), "a".into(), "b".into(), "t".into()],
        vec![
            Edge { tail: 0, head: 1 },
            Edge { tail: 0, head: 2 },
            Edge { tail: 1, head: 3 },
            Edge { tail: 2, head: 3 },
            Edge { tail: 1, head: 2 },
        ],
        vec![
            Latency::Affine { a: 0.5, b: 0.0 },
            Latency::constant(1.0),
            Latency::constant(1.0),
            Latency::Affine { a: 0.5, b: 0.0 },
            Latency::constant(0.25),
        ],
        vec![(0, 3); n],
    )
    .unwrap()
    .0
}

/// Wraps a bare instance in a document.
pub fn doc_of(instance: RoutingInstance) -> InstanceDoc {
    InstanceDoc {
        instance,
        opt_annotation: None,
        warnings: Vec::new(),
    }
}

/// The enumerable corpus: small instances (n <= 4, few simple paths per
/// player, positive Lipschitz constant, boundedness satisfied) spanning
/// parallel links, grids and layered DAGs over all latency families.
pub fn corpus() -> Vec<(String, InstanceDoc)> {
    let mut out: Vec<(String, InstanceDoc)> = Vec::new();
    out.push(("pigou2".into(), parse_instance(pigou2_text()).unwrap()));
    out.push(("pigou3".into(), doc_of(pigou(3))));
    out.push(("pigou4".into(), doc_of(pigou(4))));
    out.push(("braess2".into(), doc_of(braess(2))));
    out.push(("braess3".into(), doc_of(braess(3))));

    let families = [GenFamily::Affine, GenFamily::Quadratic, GenFamily::Mixed];
    let mut seed = 100u64;
    for &m in &[2usize, 3, 4] {
        for &fam in &families {
            for &n in &[2usize, 3, 4] {
                seed += 1;
                let doc =
                    generate_instance(GenKind::ParallelLinks, n, m, fam, seed).expect("gen");
                assert!(doc.warnings.is_empty(), "{:?}", doc.warnings);
                out.push((format!("par-m{m}-{fam:?}-n{n}-s{seed}"), doc));
            }
        }
    }
    for &fam in &families {
        for &n in &[2usize, 3, 4] {
            seed += 1;
            let doc = generate_instance(GenKind::Grid, n, 8, fam, seed).expect("gen");
            assert!(doc.warnings.is_empty());
            out.push((format!("grid-{fam:?}-n{n}-s{seed}"), doc));
        }
    }
    for &fam in &families {
        for &n in &[2usize, 3, 4] {
            seed += 1;
            let doc = generate_instance(GenKind::LayeredDag, n, 8, fam, seed).expect("gen");
            assert!(doc.warnings.is_empty());
            out.push((format!("dag-{fam:?}-n{n}-s{seed}"), doc));
        }
    }
    assert!(out.len() >= 50, "corpus holds {} instances", out.len());
    out
}
