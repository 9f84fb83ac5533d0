use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use lightmamba_core::model::MambaConfig;
use lightmamba_sim::schedule::{build_tasks, token_costs};
use lightmamba_sim::{
    simulate, BitWidths, HwConfig, MmuConfig, ScheduleMode, SimOptions, SsmuConfig, Task,
    TileConfig, Unit, Workload,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Discrete-event replay: each unit serves its tasks in list order; a task
/// starts when its unit is idle and every dependency has completed.
fn replay(tasks: &[Task]) -> (u64, Vec<(u64, u64)>) {
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); Unit::ALL.len()];
    for (i, t) in tasks.iter().enumerate() {
        queues[t.unit.index()].push_back(i);
    }
    let mut done: Vec<Option<u64>> = vec![None; tasks.len()];
    let mut spans = vec![(0, 0); tasks.len()];
    let mut busy = [false; 5];
    let mut events: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut now = 0;
    loop {
        for u in 0..busy.len() {
            if busy[u] {
                continue;
            }
            if let Some(&head) = queues[u].front() {
                if tasks[head].deps.iter().all(|&d| done[d].is_some()) {
                    queues[u].pop_front();
                    busy[u] = true;
                    spans[head] = (now, now + tasks[head].duration);
                    events.push(Reverse((now + tasks[head].duration, head)));
                }
            }
        }
        let Some(Reverse((t, id))) = events.pop() else {
            break;
        };
        now = t;
        done[id] = Some(t);
        busy[tasks[id].unit.index()] = false;
    }
    assert!(done.iter().all(Option::is_some), "replay deadlocked");
    (spans.iter().map(|s| s.1).max().unwrap_or(0), spans)
}

fn random_workload(rng: &mut ChaCha8Rng) -> (Workload, HwConfig) {
    let heads = rng.random_range(1..=8usize);
    let head_dim = [2, 4, 8, 16][rng.random_range(0..4)];
    let d_model = rng.random_range(4..=64usize);
    let model = MambaConfig {
        d_model,
        n_layers: rng.random_range(1..=3),
        n_heads: heads,
        head_dim,
        d_state: rng.random_range(1..=32),
        n_groups: 1,
        conv_kernel: rng.random_range(2..=4),
        vocab_size: rng.random_range(8..=300),
        expand: 1,
        d_inner: Some(heads * head_dim),
        norm_eps: 1e-5,
    };
    let bits = [4, 8, 16];
    let mut w = Workload::new(
        model,
        BitWidths {
            weights: bits[rng.random_range(0..3)],
            activations: bits[rng.random_range(0..3)],
            ssm: bits[rng.random_range(0..2)],
        },
        ScheduleMode::Sequential,
    );
    w.tile = TileConfig {
        n_p: rng.random_range(1..=6),
        p_p: rng.random_range(1..=40),
    };
    w.group_size = [16, 32, 128][rng.random_range(0..3)];
    w.online_rotation = rng.random_bool(0.5);
    let mut par = || rng.random_range(1..=8u64);
    let ssmu = SsmuConfig {
        conv: par(),
        discretize: par(),
        dbx: par(),
        ah: par(),
        h_update: par(),
        h_requant: par(),
        ch: par(),
        y_out: par(),
    };
    let hw = HwConfig {
        mmu: MmuConfig {
            d_in: rng.random_range(1..=16),
            d_out: rng.random_range(1..=8),
        },
        ssmu,
        nfu_parallelism: rng.random_range(1..=8),
        dram_bandwidth_gbps: rng.random_range(0.5..50.0),
        ..HwConfig::vck190()
    };
    (w, hw)
}

#[test]
fn closed_form_matches_event_replay_and_dominance_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (w, hw) = random_workload(&mut rng);
        let tc = token_costs(&w, &hw).unwrap();
        let mut cycles = Vec::new();
        for mode in ScheduleMode::ALL {
            let (makespan, spans) = replay(&build_tasks(&tc, mode));
            assert_eq!(makespan, tc.cycles(mode), "{mode} {w:?}");
            let r = simulate(&w.with_schedule(mode), &hw, SimOptions { timeline: true }).unwrap();
            assert_eq!(r.cycles_per_token, makespan);
            let nonzero: Vec<(u64, u64)> = spans.into_iter().filter(|s| s.1 > s.0).collect();
            let from_report: Vec<(u64, u64)> = r
                .timeline
                .iter()
                .map(|e| (e.start_cycle, e.end_cycle))
                .collect();
            assert_eq!(nonzero, from_report);
            cycles.push(makespan);
        }
        assert!(
            cycles[2] <= cycles[1] && cycles[1] <= cycles[0],
            "{cycles:?} {w:?}"
        );
    }
}

#[test]
fn timeline_is_consistent_per_unit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (w, hw) = random_workload(&mut rng);
        for mode in ScheduleMode::ALL {
            let r = simulate(&w.with_schedule(mode), &hw, SimOptions { timeline: true }).unwrap();
            for unit in Unit::ALL {
                let mut spans: Vec<(u64, u64)> = r
                    .timeline
                    .iter()
                    .filter(|e| e.unit == unit)
                    .map(|e| (e.start_cycle, e.end_cycle))
                    .collect();
                spans.sort();
                for pair in spans.windows(2) {
                    assert!(pair[0].1 <= pair[1].0, "{unit:?} overlap {pair:?}");
                }
                let busy: u64 = spans.iter().map(|s| s.1 - s.0).sum();
                assert_eq!(busy, r.busy_cycles.get(unit));
                assert_eq!(r.utilization(unit), busy as f64 / r.cycles_per_token as f64);
                assert!(r.utilization(unit) <= 1.0);
            }
            assert_eq!(r.mmu_utilization, r.utilization(Unit::Mmu));
            assert_eq!(r.ssmu_utilization, r.utilization(Unit::Ssmu));
            assert_eq!(
                r.timeline.iter().map(|e| e.end_cycle).max(),
                Some(r.cycles_per_token)
            );
        }
    }
}

#[test]
fn bandwidth_is_a_hard_ceiling() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (w, hw) = random_workload(&mut rng);
        for mode in ScheduleMode::ALL {
            let r = simulate(&w.with_schedule(mode), &hw, SimOptions::default()).unwrap();
            assert!(r.tokens_per_s <= r.bandwidth_bound_tokens_per_s * (1.0 + 1e-12));
            assert_eq!(
                r.tokens_per_s,
                hw.freq_mhz * 1e6 / r.cycles_per_token as f64
            );
        }
    }
}

#[test]
fn halving_weight_bits_never_adds_cycles() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let (mut w, hw) = random_workload(&mut rng);
        for mode in ScheduleMode::ALL {
            w.schedule = mode;
            let mut prev = u64::MAX;
            for bits in [16, 8, 4] {
                w.bits.weights = bits;
                let c = token_costs(&w, &hw).unwrap().cycles(mode);
                assert!(c <= prev, "{bits} bits: {c} > {prev}");
                prev = c;
            }
        }
    }
}

#[test]
fn single_head_reorder_changes_nothing() {
    let model = MambaConfig {
        n_heads: 1,
        head_dim: 64,
        d_inner: Some(64),
        ..MambaConfig::toy()
    };
    let hw = HwConfig::vck190();
    let w = Workload::new(model, BitWidths::w4a4(), ScheduleMode::Sequential);
    let seq = simulate(&w, &hw, SimOptions::default()).unwrap();
    let re = simulate(
        &w.with_schedule(ScheduleMode::Reordered),
        &hw,
        SimOptions::default(),
    )
    .unwrap();
    assert_eq!(seq.cycles_per_token, re.cycles_per_token);
    assert_eq!(seq.busy_cycles, re.busy_cycles);
}

fn full_model(hw: &HwConfig, bits: BitWidths, mode: ScheduleMode) -> lightmamba_sim::SimReport {
    let w = Workload::new(MambaConfig::mamba2_2_7b(), bits, mode);
    simulate(&w, hw, SimOptions::default()).unwrap()
}

#[test]
fn board_throughput_bands() {
    let vck = HwConfig::vck190();
    let cases = [
        (&vck, BitWidths::w4a4(), 5.0, 9.4),
        (&vck, BitWidths::w8a8(), 2.5, 4.7),
        (&HwConfig::u280(), BitWidths::w4a4(), 65.0, 121.0),
    ];
    for (hw, bits, lo, hi) in cases {
        let r = full_model(hw, bits, ScheduleMode::FineTiled);
        assert!(r.feasible, "{:?}", r.infeasible_reasons);
        assert!(
            (lo..=hi).contains(&r.tokens_per_s),
            "{} {bits:?}: {}",
            hw.name,
            r.tokens_per_s
        );
        assert!(r.tokens_per_s <= r.bandwidth_bound_tokens_per_s);
    }
}

#[test]
fn reordering_lifts_mmu_utilization() {
    let hw = HwConfig::vck190();
    let seq = full_model(&hw, BitWidths::w4a4(), ScheduleMode::Sequential);
    let re = full_model(&hw, BitWidths::w4a4(), ScheduleMode::Reordered);
    let cut = 1.0 - re.cycles_per_token as f64 / seq.cycles_per_token as f64;
    assert!((0.25..=0.40).contains(&cut), "{cut}");
    assert!(seq.mmu_utilization <= 0.65, "{}", seq.mmu_utilization);
    assert!(re.mmu_utilization >= 0.90, "{}", re.mmu_utilization);
}

#[test]
fn tiling_cuts_uram_in_report() {
    let hw = HwConfig::vck190();
    let re = full_model(&hw, BitWidths::w4a4(), ScheduleMode::Reordered);
    let ft = full_model(&hw, BitWidths::w4a4(), ScheduleMode::FineTiled);
    assert!(re.uram_used as f64 >= 3.5 * ft.uram_used as f64);
}

#[test]
fn resource_overrun_is_reported_not_raised() {
    let hw = HwConfig {
        uram_total: 10,
        ..HwConfig::vck190()
    };
    let r = full_model(&hw, BitWidths::w4a4(), ScheduleMode::Reordered);
    assert!(!r.feasible);
    assert!(r.infeasible_reasons.iter().any(|s| s.contains("URAM")));
    assert!(r.cycles_per_token > 0);
}

#[test]
fn unsupported_transform_size_is_infeasible() {
    let hw = HwConfig {
        htu: lightmamba_sim::HtuConfig {
            pot_points: 64,
            ..HwConfig::vck190().htu
        },
        ..HwConfig::vck190()
    };
    let r = full_model(&hw, BitWidths::w4a4(), ScheduleMode::FineTiled);
    assert!(!r.feasible);
    assert!(
        r.infeasible_reasons.iter().any(|s| s.contains("128-point")),
        "{:?}",
        r.infeasible_reasons
    );
}

#[test]
fn remainder_tiles_are_noted() {
    let w = Workload {
        tile: TileConfig { n_p: 3, p_p: 48 },
        ..Workload::new(
            MambaConfig::mamba2_2_7b(),
            BitWidths::w4a4(),
            ScheduleMode::FineTiled,
        )
    };
    let r = simulate(&w, &HwConfig::vck190(), SimOptions::default()).unwrap();
    assert_eq!(r.notes.len(), 2, "{:?}", r.notes);
    assert!(r.notes[0].contains("80 heads"));
    assert!(r.notes[1].contains("128 states"));
    assert_eq!((r.ssmu.head_tiles, r.ssmu.state_tiles), (27, 3));
}

#[test]
fn fifo_override_below_minimum_is_flagged() {
    let mut hw = HwConfig::u280();
    hw.ssmu.ah = 8;
    hw.fifo_depths.insert("dbx->ah".into(), 1);
    let r = full_model(&hw, BitWidths::w4a4(), ScheduleMode::FineTiled);
    assert!(!r.feasible);
    assert_eq!(r.ssmu.fifo[0].depth, 1);
}

#[test]
fn report_roundtrips_through_json() {
    let r = full_model(
        &HwConfig::u280(),
        BitWidths::w8a8(),
        ScheduleMode::Reordered,
    );
    let back: lightmamba_sim::SimReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn hw_presets_roundtrip_and_validate() {
    for hw in [HwConfig::vck190(), HwConfig::u280()] {
        let back = HwConfig::from_json(&hw.to_json()).unwrap();
        assert_eq!(back, hw);
        assert_eq!(HwConfig::preset(&hw.name), Some(hw));
    }
    let bad = HwConfig::vck190()
        .to_json()
        .replace("\"freq_mhz\"", "\"freq\"");
    assert!(HwConfig::from_json(&bad).is_err());
    let over = HwConfig {
        mmu: MmuConfig {
            d_in: 64,
            d_out: 64,
        },
        ..HwConfig::vck190()
    };
    assert!(over.validate().is_err());
}
