mod common;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::*;
use smi::channel::{Communicator, Protocol};
use smi::config::{Mode, PortMap, RuntimeConfig};
use smi::packet::OpType;
use smi::topology::{make_bus, make_torus, TopologySpec};
use smi::transport::{Fabric, Node, Program, TraceKind};
use smi::SmiError;

fn fabric(topo: TopologySpec, ports: u8, mode: Mode) -> Fabric {
    let cfg = RuntimeConfig {
        mode,
        trace: true,
        ..RuntimeConfig::default()
    };
    Fabric::with_generated_routes(topo, PortMap::p2p(ports), cfg).unwrap()
}

#[test]
fn randomized_transfers() {
    let fabrics = p2p_fabrics();
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let mut protocols = [0usize; 2];
    for _ in 0..1000 {
        let c = P2pCase::random(&mut rng, &fabrics, &P2P_PORT_LIST);
        protocols[(c.expected_protocol() == Protocol::Credit) as usize] += 1;
        run_p2p_case(&fabrics, &c).unwrap();
    }
    assert!(protocols.iter().all(|&n| n > 300), "{protocols:?}");
}

#[test]
fn open_examples() {
    let mut f = fabric(make_bus(2).unwrap(), 2, Mode::Cycle);
    f.config_mut().k.insert(0, 16);
    let rep = f
        .run(vec![Program::new(0, |ctx| {
            let w = ctx.world();
            let eager = ctx.open_send_channel::<i32>(8, 1, 0, &w)?.protocol();
            let small = Communicator::new(vec![0, 1]).unwrap();
            let out_of_range = ctx.open_send_channel::<i32>(8, 9, 1, &small).err();
            let undeclared = ctx.open_send_channel::<i32>(8, 1, 7, &w).err();
            Ok((eager, out_of_range, undeclared))
        })])
        .unwrap();
    let (eager, range, undeclared) = &rep.outputs[0];
    assert_eq!(*eager, Protocol::Eager);
    assert!(matches!(range, Some(SmiError::RankOutOfRange { rank: 9, size: 2 })));
    assert!(matches!(undeclared, Some(SmiError::UndeclaredPort(7))));
    assert_eq!(rep.trace.len(), 0, "opening channels emits nothing");

    let rep = f
        .run(vec![Program::new(1, |ctx| {
            let w = ctx.world();
            let credit = ctx.open_send_channel::<f32>(100, 0, 0, &w)?.protocol();
            let rx = ctx.open_recv_channel::<i32>(8, 0, 1, &w)?;
            let empty = ctx.open_recv_channel::<i32>(0, 0, 0, &w)?;
            Ok((credit, rx.protocol(), rx.progress(), rx.is_closed(), empty.is_closed()))
        })])
        .unwrap();
    assert_eq!(rep.outputs[0], (Protocol::Credit, Protocol::Eager, 0, false, true));
}

#[test]
fn port_reuse_while_open_is_an_error() {
    let f = fabric(make_bus(2).unwrap(), 1, Mode::Cycle);
    let rep = f
        .run(vec![
            Program::new(0, |ctx| {
                let w = ctx.world();
                let mut a = ctx.open_send_channel::<i32>(1, 1, 0, &w)?;
                let again = ctx.open_send_channel::<i32>(1, 1, 0, &w).err();
                a.push(5)?;
                let reopened = ctx.open_send_channel::<i32>(1, 1, 0, &w).map(|_| ()).err();
                Ok((again, reopened))
            }),
            Program::new(1, |ctx| {
                let mut b = ctx.open_recv_channel::<i32>(1, 0, 0, &ctx.world())?;
                b.pop()?;
                Ok((None, None))
            }),
        ])
        .unwrap();
    assert!(matches!(rep.outputs[0].0, Some(SmiError::PortBusy { port: 0, .. })));
    assert!(rep.outputs[0].1.is_none(), "a finished channel frees its port");
}

#[test]
fn push_flushes_full_packets_and_remainder() {
    let f = fabric(make_bus(2).unwrap(), 1, Mode::Cycle);
    for (count, want) in [(7usize, vec![7u8]), (8, vec![7, 1])] {
        let rep = f
            .run(vec![
                Program::new(0, move |ctx| {
                    let mut ch = ctx.open_send_channel::<f32>(count, 1, 0, &ctx.world())?;
                    for i in 0..count {
                        ch.push(i as f32)?;
                    }
                    let extra = ch.push(0.0).err();
                    Ok((ch.is_closed(), extra, Vec::new()))
                }),
                Program::new(1, move |ctx| {
                    let mut ch = ctx.open_recv_channel::<f32>(count, 0, 0, &ctx.world())?;
                    let got = (0..count).map(|_| ch.pop()).collect::<smi::Result<Vec<_>>>()?;
                    let extra = ch.pop().err();
                    Ok((ch.is_closed(), extra, got))
                }),
            ])
            .unwrap();
        let counts: Vec<u8> = rep
            .trace
            .iter()
            .filter(|e| e.kind == TraceKind::Emit && e.is_data())
            .map(|e| e.header.valid_count())
            .collect();
        assert_eq!(counts, want);
        for (closed, extra, _) in &rep.outputs {
            assert!(closed);
            assert!(matches!(extra, Some(SmiError::ContractViolation(_))));
        }
        assert_eq!(rep.outputs[1].2, (0..count).map(|i| i as f32).collect::<Vec<_>>());
    }
}

fn ordered_pops(mode: Mode) {
    let f = fabric(make_bus(2).unwrap(), 2, mode);
    let rep = f
        .run(vec![
            Program::new(0, |ctx| {
                ctx.sleep_cycles(200)?;
                let w = ctx.world();
                let mut a = ctx.open_send_channel::<i32>(5, 1, 0, &w)?;
                for v in [3, 1, 4, 1, 5] {
                    a.push(v)?;
                }
                Ok(Vec::new())
            }),
            Program::new(1, |ctx| {
                let mut a = ctx.open_recv_channel::<i32>(5, 0, 0, &ctx.world())?;
                (0..5).map(|_| a.pop()).collect()
            }),
        ])
        .unwrap();
    assert_eq!(rep.outputs[1], vec![3, 1, 4, 1, 5]);
}

#[test]
fn pop_preserves_order_cycle() {
    ordered_pops(Mode::Cycle);
}

#[test]
fn pop_blocks_until_data_concurrent() {
    ordered_pops(Mode::Concurrent);
}

#[test]
fn interleaved_ports_stay_in_order() {
    for mode in [Mode::Cycle, Mode::Concurrent] {
        let f = fabric(make_bus(2).unwrap(), 2, mode);
        let rep = f
            .run(vec![
                Program::new(0, |ctx| {
                    let w = ctx.world();
                    let mut a = ctx.open_send_channel::<i16>(300, 1, 0, &w)?;
                    let mut b = ctx.open_send_channel::<i16>(300, 1, 1, &w)?;
                    for i in 0..300 {
                        a.push(i)?;
                        b.push(-i)?;
                    }
                    Ok((Vec::new(), Vec::new()))
                }),
                Program::new(1, |ctx| {
                    let w = ctx.world();
                    let mut a = ctx.open_recv_channel::<i16>(300, 0, 0, &w)?;
                    let mut b = ctx.open_recv_channel::<i16>(300, 0, 1, &w)?;
                    let (mut xa, mut xb) = (Vec::new(), Vec::new());
                    for _ in 0..300 {
                        xb.push(b.pop()?);
                        xa.push(a.pop()?);
                    }
                    Ok((xa, xb))
                }),
            ])
            .unwrap();
        assert_eq!(rep.outputs[1].0, (0..300).collect::<Vec<i16>>());
        assert_eq!(rep.outputs[1].1, (0..300).map(|i: i16| -i).collect::<Vec<_>>());
    }
}

#[test]
fn credit_window_of_two_packets() {
    let mut f = fabric(make_bus(4).unwrap(), 1, Mode::Cycle);
    f.config_mut().k.insert(0, 14);
    let rep = f
        .run(vec![
            Program::new(0, |ctx| {
                let mut ch = ctx.open_send_channel::<f32>(70, 3, 0, &ctx.world())?;
                assert_eq!((ch.protocol(), ch.credit_budget()), (Protocol::Credit, 2));
                for i in 0..70 {
                    ch.push(i as f32)?;
                }
                Ok(Vec::new())
            }),
            Program::new(3, |ctx| {
                let mut ch = ctx.open_recv_channel::<f32>(70, 0, 0, &ctx.world())?;
                (0..70).map(|_| ch.pop()).collect()
            }),
        ])
        .unwrap();
    assert_eq!(rep.outputs[1], (0..70).map(|i| i as f32).collect::<Vec<_>>());
    assert!(max_in_flight(&rep.trace, 0, 3, 0) <= 2);
    assert_eq!(emitted(&rep.trace, 3, 0, OpType::Credit), 10 - 2);
}

#[test]
fn eager_sends_no_credits() {
    let mut f = fabric(make_bus(2).unwrap(), 1, Mode::Cycle);
    f.config_mut().k.insert(0, 70);
    let rep = f
        .run(vec![
            Program::new(0, |ctx| {
                let mut ch = ctx.open_send_channel::<f32>(70, 1, 0, &ctx.world())?;
                for i in 0..70 {
                    ch.push(i as f32)?;
                }
                Ok(Vec::new())
            }),
            Program::new(1, |ctx| {
                let mut ch = ctx.open_recv_channel::<f32>(70, 0, 0, &ctx.world())?;
                (0..70).map(|_| ch.pop()).collect()
            }),
        ])
        .unwrap();
    assert_eq!(rep.outputs[1].len(), 70);
    assert_eq!(emitted(&rep.trace, 1, 0, OpType::Credit), 0);
}

#[test]
fn stalled_receiver_blocks_only_its_sender() {
    const WAKE: u64 = 3000;
    let mut f = fabric(make_bus(2).unwrap(), 2, Mode::Cycle);
    f.config_mut().k.insert(0, 14);
    let rep = f
        .run(vec![
            Program::new(0, |ctx| {
                let mut ch = ctx.open_send_channel::<f32>(70, 1, 0, &ctx.world())?;
                for i in 0..70 {
                    ch.push(i as f32)?;
                }
                Ok(ctx.now())
            }),
            Program::new(0, |ctx| {
                let mut ch = ctx.open_send_channel::<i32>(500, 1, 1, &ctx.world())?;
                for i in 0..500 {
                    ch.push(i)?;
                }
                Ok(ctx.now())
            }),
            Program::new(1, |ctx| {
                let mut ch = ctx.open_recv_channel::<f32>(70, 0, 0, &ctx.world())?;
                ctx.sleep_cycles(WAKE)?;
                for _ in 0..70 {
                    ch.pop()?;
                }
                Ok(ctx.now())
            }),
            Program::new(1, |ctx| {
                let mut ch = ctx.open_recv_channel::<i32>(500, 0, 1, &ctx.world())?;
                for i in 0..500 {
                    assert_eq!(ch.pop()?, i);
                }
                Ok(ctx.now())
            }),
        ])
        .unwrap();
    assert!(rep.outputs[3] < WAKE, "other channel finished at {}", rep.outputs[3]);
    assert!(rep.outputs[0] > WAKE, "blocked sender finished at {}", rep.outputs[0]);
    let before_wake = rep
        .trace
        .iter()
        .filter(|e| e.cycle < WAKE && e.kind == TraceKind::Emit && e.is_data() && e.header.port == 0)
        .count();
    assert_eq!(before_wake, 2);
}

#[test]
fn communicator_examples() {
    let f = fabric(make_torus(2, 4).unwrap(), 1, Mode::Cycle);
    let rep = f
        .run_spmd(|ctx| {
            let w = ctx.world();
            let sub = Communicator::new(vec![4, 5, 6, 7]).unwrap();
            Ok((ctx.comm_rank(&w)?, ctx.comm_size(&w), ctx.comm_rank(&sub).ok()))
        })
        .unwrap();
    assert_eq!(rep.outputs[3], (3, 8, None));
    assert_eq!(rep.outputs[5], (5, 8, Some(1)));
}

type Workload = Vec<(u8, u8, u8, usize)>;

fn random_workload(rng: &mut StdRng) -> Workload {
    let mut w = Vec::new();
    for src in 0..4u8 {
        for port in 0..2u8 {
            let dst = (src + 1 + port) % 4;
            w.push((src, dst, port, rng.gen_range(1..150)));
        }
    }
    w
}

fn run_workload(f: &Fabric, w: &Workload) -> Vec<Vec<i32>> {
    let mut programs = Vec::new();
    for &(src, dst, port, count) in w {
        let base = (src as i32) * 10_000 + port as i32 * 1000;
        programs.push(Program::new(src, move |ctx| {
            let mut ch = ctx.open_send_channel::<i32>(count, dst as usize, port, &ctx.world())?;
            for i in 0..count {
                ch.push(base + i as i32)?;
            }
            Ok(Vec::new())
        }));
        programs.push(Program::new(dst, move |ctx| {
            let mut ch = ctx.open_recv_channel::<i32>(count, src as usize, port, &ctx.world())?;
            (0..count).map(|_| ch.pop()).collect()
        }));
    }
    f.run(programs)
        .unwrap()
        .outputs
        .into_iter()
        .skip(1)
        .step_by(2)
        .collect()
}

#[test]
fn concurrent_matches_cycle_mode() {
    let mut rng = StdRng::seed_from_u64(42);
    for _ in 0..5 {
        let w = random_workload(&mut rng);
        let cycle = fabric(make_bus(4).unwrap(), 2, Mode::Cycle);
        let conc = fabric(make_bus(4).unwrap(), 2, Mode::Concurrent);
        assert_eq!(run_workload(&cycle, &w), run_workload(&conc, &w));
    }
}

#[test]
fn cycle_mode_is_deterministic() {
    let f = fabric(make_torus(2, 2).unwrap(), 2, Mode::Cycle);
    let w = random_workload(&mut StdRng::seed_from_u64(7));
    let trace = |f: &Fabric| {
        let mut programs = Vec::new();
        for &(src, dst, port, count) in &w {
            programs.push(Program::new(src, move |ctx| {
                let mut ch = ctx.open_send_channel::<i32>(count, dst as usize, port, &ctx.world())?;
                (0..count).try_for_each(|i| ch.push(i as i32))
            }));
            programs.push(Program::new(dst, move |ctx| {
                let mut ch = ctx.open_recv_channel::<i32>(count, src as usize, port, &ctx.world())?;
                (0..count).try_for_each(|_| ch.pop().map(|_| ()))
            }));
        }
        let rep = f.run(programs).unwrap();
        (rep.cycles, rep.trace)
    };
    assert_eq!(trace(&f), trace(&f));
    let (_, t) = trace(&f);
    assert!(t.iter().any(|e| matches!(e.at, Node::Ckr { .. })));
}
