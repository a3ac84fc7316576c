use accomp_core::codec::{CodecConfig, CodecModel};
use accomp_core::metrics::Embedder;
use accomp_core::synthdata::*;
use accomp_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec(n: u64, track_len: f64) -> DatasetSpec {
    DatasetSpec {
        n_tracksets: n,
        track_len,
        ..DatasetSpec::default()
    }
}

/// RMS per 0.5 s block.
fn envelope(x: &[f32]) -> Vec<f64> {
    x.chunks(2048)
        .map(|c| (c.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / c.len() as f64).sqrt())
        .collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn generation_is_deterministic_and_well_formed() {
    let spec = small_spec(20, 16.0);
    for i in 0..20 {
        let a = generate_trackset::<f32>(&spec, i).unwrap();
        assert_eq!(a, generate_trackset::<f32>(&spec, i).unwrap());
        assert!((3..=6).contains(&a.tracks.len()));
        assert!(a.tracks.iter().filter(|t| t.role == Role::Vocal).count() <= 1);
        assert!(a
            .tracks
            .iter()
            .all(|t| t.signal.len() == a.len_samples() && t.signal.peak() <= 1.0));
        assert_eq!(a.len_samples() % 4096, 0);
    }
    assert!(generate_trackset::<f32>(&spec, 20).is_err());
}

#[test]
fn tracks_of_one_set_share_envelope_structure() {
    let spec = small_spec(100, 24.0);
    let sets: Vec<TrackSet<f32>> = (0..100).map(|i| generate_trackset(&spec, i).unwrap()).collect();
    let env = |s: &TrackSet<f32>, k: usize| envelope(&s.tracks[k].signal.samples);
    let within: f64 = sets.iter().map(|s| correlation(&env(s, 0), &env(s, 1))).sum::<f64>() / 100.0;
    let across: f64 = (0..100)
        .map(|i| correlation(&env(&sets[i], 0), &env(&sets[(i + 1) % 100], 1)))
        .sum::<f64>()
        / 100.0;
    assert!(within > 0.0 && within > across, "within {within}, across {across}");
}

#[test]
fn window_arithmetic() {
    let spec = DatasetSpec::default();
    let sr = 4096;
    let b = window_bounds(16 * sr, &spec);
    let secs: Vec<(usize, usize)> = b.iter().map(|s| (s.start / sr, s.end() / sr)).collect();
    assert_eq!(secs, vec![(0, 10), (3, 13), (6, 16)]);
    assert_eq!(window_bounds(10 * sr, &spec).len(), 1);
    assert_eq!(window_bounds(99 * sr / 10, &spec).len(), 0);
    for w in b.windows(2) {
        assert_eq!(w[0].end() - w[1].start, 7 * sr);
    }
    assert_eq!(DatasetSpec::default().windows_per_track(), 10);
}

fn manual_set(roles: &[Role]) -> TrackSet<f32> {
    let tracks = roles
        .iter()
        .enumerate()
        .map(|(i, &role)| Track {
            role,
            signal: AudioBuffer::new(vec![0.1 * (i + 1) as f32; 8192], 4096).unwrap(),
        })
        .collect();
    TrackSet {
        tracks,
        tempo_factor: 1.0,
        key_index: 0,
    }
}

#[test]
fn single_non_vocal_track_is_always_target() {
    let set = manual_set(&[Role::Vocal, Role::Bass]);
    let seg = SegmentBounds { start: 0, len: 8192 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let p = make_pair(&set, seg, &mut rng).unwrap();
        assert_eq!((p.target, p.target_role, p.context_mask), (1, Role::Bass, 0b01));
    }
}

#[test]
fn all_vocal_is_unsatisfiable() {
    let set = manual_set(&[Role::Vocal]);
    let seg = SegmentBounds { start: 0, len: 8192 };
    let err = make_pair(&set, seg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::UnsatisfiablePair));
}

/// Inclusion frequency of one element in a uniform non-empty subset of `m`:
/// `2^(m−1) / (2^m − 1)`, which tends to 1/2 from above.
fn inclusion_oracle(m: u32) -> f64 {
    2f64.powi(m as i32 - 1) / (2f64.powi(m as i32) - 1.0)
}

#[test]
fn subset_inclusion_matches_uniform_subset_oracle() {
    let roles = [
        Role::Bass,
        Role::Guitar,
        Role::Piano,
        Role::Drums,
        Role::Vocal,
        Role::Other,
    ];
    let seg = SegmentBounds { start: 0, len: 8192 };
    for (set, m) in [(manual_set(&roles), 5u32), (manual_set(&roles[..3]), 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = set.tracks.len();
        let (mut included, mut eligible) = (vec![0usize; n], vec![0usize; n]);
        for _ in 0..10_000 {
            let p = make_pair(&set, seg, &mut rng).unwrap();
            assert_ne!(p.target_role, Role::Vocal);
            assert_eq!(p.context_mask & (1 << p.target), 0);
            assert!(p.context_mask != 0 && p.context.peak() <= 1.0);
            assert!(p.style_source.end() <= p.accompaniment.len());
            assert_eq!(p.style_source.len, 4096);
            for i in (0..n).filter(|&i| i != p.target) {
                eligible[i] += 1;
                included[i] += (p.context_mask >> i & 1) as usize;
            }
        }
        let oracle = inclusion_oracle(m);
        for i in 0..n {
            let freq = included[i] as f64 / eligible[i] as f64;
            assert!((freq - oracle).abs() < 0.02, "m={m} track {i}: {freq} vs {oracle}");
        }
    }
}

#[test]
fn context_envelope_linearly_predicts_accompaniment_envelope() {
    let spec = small_spec(120, 16.0);
    let mut xs = Vec::new();
    for i in 0..120 {
        let set = generate_trackset::<f32>(&spec, i).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        for seg in window_segments(&set, &spec) {
            let p = make_pair(&set, seg, &mut rng).unwrap();
            let (c, a) = (envelope(&p.context.samples), envelope(&p.accompaniment.samples));
            xs.push((i, c, a));
        }
    }
    let points = |train: bool| -> Vec<(f64, f64)> {
        xs.iter()
            .filter(|(i, _, _)| (i % 4 != 0) == train)
            .flat_map(|(_, c, a)| c.iter().copied().zip(a.iter().copied()).collect::<Vec<_>>())
            .collect()
    };
    let train = points(true);
    let n = train.len() as f64;
    let (mx, my) = (
        train.iter().map(|p| p.0).sum::<f64>() / n,
        train.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let slope = train.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / train.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let test = points(false);
    let ty = test.iter().map(|p| p.1).sum::<f64>() / test.len() as f64;
    let ss_res: f64 = test.iter().map(|p| (p.1 - (my + slope * (p.0 - mx))).powi(2)).sum();
    let ss_tot: f64 = test.iter().map(|p| (p.1 - ty).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(r2 > 0.0, "held-out R² {r2}");
}

#[test]
fn corpus_counts_and_round_trips() {
    let spec = DatasetSpec {
        n_tracksets: 10,
        track_len: 16.0,
        seed: 3,
        ..DatasetSpec::default()
    };
    let codec = CodecModel::<f32>::new(CodecConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
    let embedder = Embedder::new(0, &codec).unwrap();
    let corpus = build_corpus(&spec, &codec, &embedder, "test").unwrap();
    assert_eq!(corpus.records.len(), 30);
    for r in &corpus.records {
        assert_eq!(r.context_mask & (1 << r.target_track), 0);
        assert!(r.style_source.end() <= r.segment.len);
        assert_eq!(
            (r.context.frames(), r.accompaniment.frames(), r.style.len()),
            (10, 10, 64)
        );
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.darc");
    corpus.write(&path).unwrap();
    assert_eq!(Corpus::read(&path).unwrap(), corpus);
    assert_eq!(build_corpus(&spec, &codec, &embedder, "test").unwrap(), corpus);
    assert!(matches!(
        Corpus::read(&dir.path().join("none")),
        Err(Error::MissingArtifact(_))
    ));
}
