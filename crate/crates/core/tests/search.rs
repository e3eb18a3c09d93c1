use beamsim_core::baseline::{exhaustive_search, hierarchical_search_with};
use beamsim_core::channel::{noise_power_for_snr, synthesize_channel, ChannelTensor, OfdmConfig};
use beamsim_core::codebook::{parent_child_map, Resolution};
use beamsim_core::measurement::{best_beam, sector_codebooks, sweep};
use beamsim_core::rng::derive_seed;
use beamsim_core::scenario::{generate_scenario, Scenario, ScenarioConfig};

fn scenario(ue_count: usize, seed: u64) -> Scenario {
    generate_scenario(&ScenarioConfig {
        ue_count,
        seed,
        ofdm: OfdmConfig::full(32, 10e6).unwrap(),
        ..ScenarioConfig::default()
    })
    .unwrap()
}

fn channels(sc: &Scenario) -> Vec<ChannelTensor> {
    sc.ues
        .iter()
        .map(|u| {
            synthesize_channel(&u.rays, &sc.config.geometry, &sc.config.ofdm)
                .unwrap()
                .normalized()
                .unwrap()
        })
        .collect()
}

struct Outcome {
    hc_top1: f64,
    exhaustive_top1: f64,
}

fn run(sc: &Scenario, hs: &[ChannelTensor], coarse: &str, fine: &str, snr_db: f64) -> Outcome {
    let c: Resolution = coarse.parse().unwrap();
    let f: Resolution = fine.parse().unwrap();
    let cbs = sector_codebooks(c, &sc.config.geometry).unwrap();
    let fbs = sector_codebooks(f, &sc.config.geometry).unwrap();
    let maps: Vec<_> = (0..3).map(|i| parent_child_map(&cbs[i], &fbs[i]).unwrap()).collect();
    let (mut hc_hits, mut ex_hits) = (0, 0);
    for (ue, h) in sc.ues.iter().zip(hs) {
        let i = ue.sector.index();
        let label = best_beam(&sweep(h, &fbs[i]).unwrap());
        let noise = noise_power_for_snr(h, snr_db).unwrap();
        let seed = derive_seed(7, u64::from(ue.id));
        let hc = hierarchical_search_with(h, &cbs[i], &fbs[i], &maps[i], noise, seed).unwrap();
        let ex = exhaustive_search(h, &fbs[i], noise, seed).unwrap();
        assert_eq!(hc.total_measurements, c.beam_count() + maps[i].children(hc.stages[0].selected).len());
        assert!(hc.total_measurements < ex.total_measurements);
        hc_hits += usize::from(hc.final_beam == label);
        ex_hits += usize::from(ex.final_beam == label);
    }
    let n = sc.ues.len() as f64;
    Outcome {
        hc_top1: hc_hits as f64 / n,
        exhaustive_top1: ex_hits as f64 / n,
    }
}

#[test]
fn hierarchical_trails_exhaustive_at_zero_db() {
    let sc = scenario(500, 21);
    let hs = channels(&sc);
    let o = run(&sc, &hs, "4x4", "16x16", 0.0);
    println!("0 dB 16->256: hc {:.3} exhaustive {:.3}", o.hc_top1, o.exhaustive_top1);
    assert!(o.hc_top1 < o.exhaustive_top1);
}

#[test]
fn exhaustive_improves_with_snr() {
    let sc = scenario(500, 22);
    let hs = channels(&sc);
    let low = run(&sc, &hs, "4x4", "16x16", 0.0);
    let high = run(&sc, &hs, "4x4", "16x16", 20.0);
    println!(
        "exhaustive 0 dB {:.3} / 20 dB {:.3}; hc {:.3} / {:.3}",
        low.exhaustive_top1, high.exhaustive_top1, low.hc_top1, high.hc_top1
    );
    assert!(high.exhaustive_top1 >= low.exhaustive_top1);
}

#[test]
fn noiseless_exhaustive_reproduces_labels() {
    let sc = scenario(40, 23);
    let hs = channels(&sc);
    let fbs = sector_codebooks("8x8".parse().unwrap(), &sc.config.geometry).unwrap();
    for (ue, h) in sc.ues.iter().zip(&hs) {
        let book = &fbs[ue.sector.index()];
        let label = best_beam(&sweep(h, book).unwrap());
        assert_eq!(exhaustive_search(h, book, 0.0, 1).unwrap().final_beam, label);
    }
}
