mod common;

use rand::rngs::StdRng;
use rand::SeedableRng;

use common::*;
use smi::channel::Communicator;
use smi::collectives::ReduceOp;
use smi::config::{Mode, RuntimeConfig};
use smi::harness::standard_ports;
use smi::packet::OpType;
use smi::topology::{make_bus, make_torus};
use smi::transport::{Fabric, Program, TraceKind};
use smi::SmiError;

fn matrix(f: &Fabric, seed: u64) {
    let mut rng = StdRng::seed_from_u64(seed);
    for size in [2, 4, 8] {
        let members = members_for(size);
        for root in roots_for(size, &mut rng) {
            for count in [1, 7, 100] {
                collective_case(f, &members, root, count).unwrap();
            }
        }
    }
}

#[test]
fn oracle_matrix_bus() {
    matrix(&collective_fabric(make_bus(8).unwrap()), 1);
}

#[test]
fn oracle_matrix_torus() {
    matrix(&collective_fabric(make_torus(2, 4).unwrap()), 2);
}

#[test]
fn concurrent_mode_and_empty_collectives() {
    let f = collective_fabric(make_bus(4).unwrap()).with_mode(Mode::Concurrent);
    for (root, count) in [(0, 1), (3, 7), (2, 100), (1, 0)] {
        collective_case(&f, &[0, 1, 2, 3], root, count).unwrap();
    }
}

#[test]
fn bcast_examples() {
    let f = collective_fabric(make_bus(4).unwrap());
    let rep = f
        .run_spmd(|ctx| {
            let mut ch = ctx.open_bcast_channel::<i32>(3, BCAST_PORT, 0, &ctx.world())?;
            let mut out = Vec::new();
            for v in [10, 20, 30] {
                let mut x = if ctx.rank() == 0 { v } else { 0 };
                ch.bcast(&mut x)?;
                out.push(x);
            }
            Ok(out)
        })
        .unwrap();
    assert!(rep.outputs.iter().all(|o| *o == [10, 20, 30]));

    let f = collective_fabric(make_torus(2, 4).unwrap());
    let rep = f
        .run_spmd(|ctx| {
            let mut ch = ctx.open_bcast_channel::<f64>(1, BCAST_PORT, 2, &ctx.world())?;
            let mut x = if ctx.rank() == 2 { 2.5 } else { 0.0 };
            ch.bcast(&mut x)?;
            Ok(x)
        })
        .unwrap();
    assert!(rep.outputs.iter().all(|&x| x == 2.5));
}

#[test]
fn empty_bcast_is_rendezvous_only() {
    let f = collective_fabric(make_bus(4).unwrap());
    let rep = f
        .run_spmd(|ctx| {
            let ch = ctx.open_bcast_channel::<i32>(0, BCAST_PORT, 1, &ctx.world())?;
            Ok(ch.is_closed())
        })
        .unwrap();
    assert!(rep.outputs.iter().all(|&c| c));
    let emits: Vec<_> = rep.trace.iter().filter(|e| e.kind == TraceKind::Emit).collect();
    assert_eq!(emits.len(), 3);
    assert!(emits
        .iter()
        .all(|e| e.header.op == OpType::SyncReady && e.header.dst == 1));
}

#[test]
fn scatter_examples() {
    let f = collective_fabric(make_bus(4).unwrap());
    for root in [0, 1] {
        let rep = f
            .run_spmd(|ctx| {
                let mut ch = ctx.open_scatter_channel::<i32>(2, SCATTER_PORT, root, &ctx.world())?;
                let snd: Vec<i32> = if ctx.rank() as usize == root {
                    (0..8).collect()
                } else {
                    Vec::new()
                };
                let mut rcv = [0; 2];
                ch.scatter(&snd, &mut rcv)?;
                Ok(rcv)
            })
            .unwrap();
        for (i, got) in rep.outputs.iter().enumerate() {
            assert_eq!(*got, [2 * i as i32, 2 * i as i32 + 1]);
        }
        let comm_of = |w: u8| w as usize;
        check_sequenced(&rep.trace, root as u8, SCATTER_PORT, true, &comm_of).unwrap();
    }
}

#[test]
fn gather_examples() {
    let f = collective_fabric(make_bus(4).unwrap());
    let rep = f
        .run_spmd(|ctx| {
            let mut ch = ctx.open_gather_channel::<i32>(1, GATHER_PORT, 0, &ctx.world())?;
            let mut rcv = vec![0; if ctx.rank() == 0 { 4 } else { 0 }];
            ch.gather(&[5 + ctx.rank() as i32], &mut rcv)?;
            Ok(rcv)
        })
        .unwrap();
    assert_eq!(rep.outputs[0], [5, 6, 7, 8]);
    check_sequenced(&rep.trace, 0, GATHER_PORT, false, &|w| w as usize).unwrap();

    let rep = f
        .run(vec![Program::new(2, |ctx| {
            let solo = Communicator::new(vec![2]).unwrap();
            let mut ch = ctx.open_gather_channel::<i32>(3, GATHER_PORT, 0, &solo)?;
            let mut rcv = [0; 3];
            ch.gather(&[4, 5, 6], &mut rcv)?;
            Ok(rcv)
        })])
        .unwrap();
    assert_eq!(rep.outputs[0], [4, 5, 6]);
    assert!(rep.trace.is_empty());
}

#[test]
fn reduce_examples() {
    let f = collective_fabric(make_bus(4).unwrap());
    let rep = f
        .run_spmd(|ctx| {
            let w = ctx.world();
            let me = ctx.rank() as i32;
            let mut sum = ctx.open_reduce_channel::<i32>(1, ReduceOp::Add, REDUCE_PORT, 0, &w)?;
            let mut s = 0;
            sum.reduce(me + 1, &mut s)?;
            let mut max = ctx.open_reduce_channel::<i32>(1, ReduceOp::Max, REDUCE_PORT, 0, &w)?;
            let mut m = 0;
            max.reduce(me, &mut m)?;
            Ok((s, m))
        })
        .unwrap();
    assert_eq!(rep.outputs[0], (10, 3));
}

#[test]
fn reduce_stays_within_one_tile() {
    let f = collective_fabric(make_torus(2, 4).unwrap());
    let rep = f
        .run_spmd(|ctx| {
            let me = ctx.rank() as usize;
            let mut ch = ctx.open_reduce_channel::<f32>(100, ReduceOp::Add, REDUCE_PORT, 0, &ctx.world())?;
            let mut out = Vec::new();
            for j in 0..100usize {
                // Uneven pacing so that some ranks try to run ahead.
                if me.is_multiple_of(3) && j.is_multiple_of(5) {
                    ctx.sleep_cycles(7)?;
                }
                let mut r = 0.0;
                ch.reduce(contribution(me, j), &mut r)?;
                out.push(r);
            }
            Ok(out)
        })
        .unwrap();
    assert!(same_bits(
        &rep.outputs[0],
        &reduce_oracle(ReduceOp::Add, 8, 100, contribution)
    ));
    check_tiles(&rep.trace, 0, REDUCE_PORT, TILE, 100, 7).unwrap();
}

#[test]
fn any_root_gives_the_same_reduction() {
    let f = collective_fabric(make_bus(8).unwrap());
    let mut results = Vec::new();
    for root in 0..8usize {
        let rep = f
            .run_spmd(|ctx| {
                let me = ctx.rank() as usize;
                let mut ch = ctx.open_reduce_channel::<f32>(20, ReduceOp::Add, REDUCE_PORT, root, &ctx.world())?;
                let mut out = Vec::new();
                for j in 0..20 {
                    let mut r = 0.0;
                    ch.reduce(contribution(me, j), &mut r)?;
                    out.push(r);
                }
                Ok(out)
            })
            .unwrap();
        results.push(rep.outputs[root].clone());
    }
    assert!(results.windows(2).all(|w| same_bits(&w[0], &w[1])));
}

#[test]
fn mismatched_parameters_are_reported() {
    let f = collective_fabric(make_bus(4).unwrap());
    let err = f
        .run_spmd(|ctx| {
            let count = if ctx.rank() == 3 { 5 } else { 4 };
            let mut ch = ctx.open_bcast_channel::<i32>(count, BCAST_PORT, 0, &ctx.world())?;
            for _ in 0..count {
                let mut x = 1;
                ch.bcast(&mut x)?;
            }
            Ok(())
        })
        .unwrap_err();
    assert!(matches!(err, SmiError::ChannelMismatch(_)), "{err}");
}

/// Each collective runs as its own program on every rank, the way separate
/// kernels would share one fabric.
#[test]
fn parallel_collectives_on_distinct_ports() {
    let f =
        Fabric::with_generated_routes(make_torus(2, 4).unwrap(), standard_ports(), RuntimeConfig::default()).unwrap();
    let mut programs: Vec<Program<'_, Vec<i32>>> = Vec::new();
    for r in 0..8u8 {
        let me = r as i32;
        for (port, root) in [(5u8, 0usize), (10, 7)] {
            programs.push(Program::new(r, move |ctx| {
                let mut ch = ctx.open_bcast_channel::<i32>(30, port, root, &ctx.world())?;
                (0..30)
                    .map(|j| {
                        let mut x = if port == 5 { j } else { -j };
                        ch.bcast(&mut x).map(|_| x)
                    })
                    .collect()
            }));
        }
        for (port, op, root) in [(8u8, ReduceOp::Add, 3usize), (11, ReduceOp::Max, 4)] {
            programs.push(Program::new(r, move |ctx| {
                let mut ch = ctx.open_reduce_channel::<i32>(30, op, port, root, &ctx.world())?;
                (0..30)
                    .map(|j| {
                        let mut out = 0;
                        let v = if op == ReduceOp::Add { me * j } else { me - j };
                        ch.reduce(v, &mut out).map(|_| out)
                    })
                    .collect()
            }));
        }
    }
    let rep = f.run(programs).unwrap();
    for r in 0..8 {
        assert_eq!(rep.outputs[4 * r], (0..30).collect::<Vec<_>>());
        assert_eq!(rep.outputs[4 * r + 1], (0..30).map(|j| -j).collect::<Vec<_>>());
    }
    assert_eq!(rep.outputs[4 * 3 + 2], (0..30).map(|j| 28 * j).collect::<Vec<_>>());
    assert_eq!(rep.outputs[4 * 4 + 3], (0..30).map(|j| 7 - j).collect::<Vec<_>>());
}
