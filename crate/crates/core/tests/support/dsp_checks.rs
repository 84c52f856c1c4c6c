//! DSP checks against direct-summation oracles.

use mdmer::audio::{decode_wav, frame_count, resample, AudioClip};
use mdmer::dsp::{
    assemble_mixed_feature, mel_center_frequencies, mel_filterbank, mel_spectrogram, mfcc, rmse,
    spectral_centroid, stft_magnitude, DspConfig,
};
use mdmer::Tensor64;
use rand::Rng;

use super::{brute_dct2, direct_dft_magnitude, periodic_hann, rng, sine, wav_pcm16};

pub fn mfcc_matches_brute_force_dct() {
    let cfg = DspConfig::default();
    let mut r = rng(11);
    let cols = 100;
    let data: Vec<f64> = (0..cfg.n_mels * cols)
        .map(|_| r.gen_range(0.0..50.0))
        .collect();
    let mel = Tensor64::new(vec![cfg.n_mels, cols], data).unwrap();
    let got = mfcc(&mel, &cfg).unwrap();
    assert_eq!(got.shape(), [20, cols]);
    for c in 0..cols {
        let logcol: Vec<f64> = (0..cfg.n_mels)
            .map(|m| (mel.at(m, c) + cfg.log_floor).ln())
            .collect();
        let want = brute_dct2(&logcol, cfg.n_mfcc);
        for (k, w) in want.iter().enumerate() {
            assert!(
                (got.at(k, c) - w).abs() < 1e-9,
                "column {c} coefficient {k}: {} vs {w}",
                got.at(k, c)
            );
        }
    }
}

pub fn stft_matches_direct_dft() {
    let cfg = DspConfig {
        n_fft: 512,
        hop: 256,
        ..DspConfig::default()
    };
    let k = 23;
    let freq = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
    let x = sine(freq, cfg.sample_rate, 2048, 1.0);
    let spec = stft_magnitude(&AudioClip::mono(x.clone(), cfg.sample_rate).unwrap(), &cfg).unwrap();
    assert_eq!(spec.n_frames(), frame_count(2048, 512, 256));
    let w = periodic_hann(cfg.n_fft);
    for f in 0..spec.n_frames() {
        let frame: Vec<f64> = (0..cfg.n_fft).map(|i| x[f * cfg.hop + i] * w[i]).collect();
        let oracle = direct_dft_magnitude(&frame);
        for (bin, o) in oracle.iter().enumerate() {
            assert!(
                (spec.magnitudes.at(bin, f) - o).abs() < 1e-8,
                "frame {f} bin {bin}"
            );
        }
        let peak = spec.magnitudes.at(k, f);
        for bin in 0..spec.n_bins() {
            assert!(spec.magnitudes.at(bin, f) <= peak);
            if bin.abs_diff(k) > 1 {
                assert!(
                    spec.magnitudes.at(bin, f) < 0.01 * peak,
                    "leak at bin {bin}"
                );
            }
        }
    }
}

pub fn centroid_of_440_within_one_bin() {
    let cfg = DspConfig::default();
    let x = sine(440.0, cfg.sample_rate, cfg.sample_rate as usize, 1.0);
    let spec = stft_magnitude(&AudioClip::mono(x, cfg.sample_rate).unwrap(), &cfg).unwrap();
    let bin = spec.bin_hz;
    for c in spectral_centroid(&spec) {
        assert!(
            (c - 440.0).abs() <= bin,
            "centroid {c} Hz vs 440 Hz (bin {bin:.2} Hz)"
        );
    }
}

pub fn rmse_of_unit_sine() {
    let cfg = DspConfig::default();
    let x = sine(441.0, cfg.sample_rate, cfg.sample_rate as usize, 1.0);
    for v in rmse(&AudioClip::mono(x, cfg.sample_rate).unwrap(), &cfg).unwrap() {
        assert!((v - 0.5f64.sqrt()).abs() < 1e-3, "rmse {v}");
    }
}

pub fn mel_argmax_of_440_is_nearest_center() {
    let cfg = DspConfig::default();
    let x = sine(440.0, cfg.sample_rate, cfg.sample_rate as usize, 1.0);
    let spec = stft_magnitude(&AudioClip::mono(x, cfg.sample_rate).unwrap(), &cfg).unwrap();
    let mel = mel_spectrogram(&spec, &mel_filterbank(&cfg).unwrap()).unwrap();
    let centers = mel_center_frequencies(&cfg);
    let nearest = (0..centers.len())
        .min_by(|&a, &b| {
            (centers[a] - 440.0)
                .abs()
                .total_cmp(&(centers[b] - 440.0).abs())
        })
        .unwrap();
    for f in 0..mel.cols() {
        let arg = (0..mel.rows())
            .max_by(|&a, &b| mel.at(a, f).total_cmp(&mel.at(b, f)))
            .unwrap();
        assert_eq!(arg, nearest, "frame {f}");
    }
}

pub fn mel_centers_hand_case() {
    let cfg = DspConfig {
        n_mels: 4,
        n_mfcc: 4,
        fmax: Some(8000.0),
        ..DspConfig::default()
    };
    let top = 2595.0 * (1.0 + 8000.0 / 700.0f64).log10();
    let want: Vec<f64> = (1..=4)
        .map(|i| 700.0 * (10f64.powf(top * i as f64 / 5.0 / 2595.0) - 1.0))
        .collect();
    let got = mel_center_frequencies(&cfg);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-6, "{g} vs {w}");
    }
}

pub fn amplitude_scaling_laws() {
    let cfg = DspConfig {
        n_fft: 1024,
        hop: 256,
        ..DspConfig::default()
    };
    let mut r = rng(5);
    let x: Vec<f64> = (0..8000)
        .map(|i| 0.3 * (i as f64 * 0.05).sin() + r.gen_range(-0.1..0.1))
        .collect();
    let clip = AudioClip::mono(x, cfg.sample_rate).unwrap();
    let loud = clip.scaled(2.0);
    for (a, b) in rmse(&clip, &cfg)
        .unwrap()
        .iter()
        .zip(rmse(&loud, &cfg).unwrap())
    {
        assert_eq!(2.0 * a, b);
    }
    let c1 = spectral_centroid(&stft_magnitude(&clip, &cfg).unwrap());
    let c2 = spectral_centroid(&stft_magnitude(&clip.scaled(3.7), &cfg).unwrap());
    for (a, b) in c1.iter().zip(&c2) {
        assert!((a - b).abs() < 1e-9);
    }
}

pub fn loud_half_has_larger_rmse_row() {
    let cfg = DspConfig {
        target_frames: 128,
        ..DspConfig::default()
    };
    let n = 2 * cfg.sample_rate as usize;
    let x: Vec<f64> = sine(330.0, cfg.sample_rate, n, 1.0)
        .into_iter()
        .enumerate()
        .map(|(i, v)| v * if i < n / 2 { 0.9 } else { 0.05 })
        .collect();
    let feat =
        assemble_mixed_feature(&AudioClip::mono(x, cfg.sample_rate).unwrap(), &cfg, None).unwrap();
    assert_eq!(feat.rows(), cfg.n_mels + cfg.n_mfcc + 2);
    assert_eq!(feat.cols(), 128);
    let row = feat.block_rows("rmse").unwrap()[0];
    let first: f64 = row[..50].iter().sum::<f64>() / 50.0;
    let last: f64 = row[78..].iter().sum::<f64>() / 50.0;
    assert!(first > last, "{first} vs {last}");
}

pub fn mixed_feature_is_deterministic() {
    let cfg = DspConfig::default();
    let clip =
        || AudioClip::mono(sine(523.25, cfg.sample_rate, 30000, 0.4), cfg.sample_rate).unwrap();
    let a = assemble_mixed_feature(&clip(), &cfg, None).unwrap();
    let b = assemble_mixed_feature(&clip(), &cfg, None).unwrap();
    assert!(a
        .data
        .data()
        .iter()
        .zip(b.data.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

pub fn wav_decoding_matches_independent_writer() {
    let mut r = rng(9);
    let samples: Vec<i16> = (0..2000).map(|_| r.gen()).collect();
    let bytes = wav_pcm16(&samples, 44100, 2);
    let clip = decode_wav::<f64>(&bytes).unwrap();
    assert_eq!(
        (clip.sample_rate(), clip.channels(), clip.frames()),
        (44100, 2, 1000)
    );
    for (a, &b) in clip.samples().iter().zip(&samples) {
        assert_eq!(*a, b as f64 / 32768.0);
    }
}

pub fn resampling_round_trip_keeps_energy() {
    let x = sine(1000.0, 22050, 22050, 0.5);
    let clip = AudioClip::mono(x, 22050).unwrap();
    let back = resample(&resample(&clip, 16000).unwrap(), 22050).unwrap();
    let energy =
        |c: &AudioClip<f64>| c.samples().iter().map(|v| v * v).sum::<f64>() / c.frames() as f64;
    let ratio = energy(&back) / energy(&clip);
    assert!((ratio - 1.0).abs() < 0.05, "energy ratio {ratio}");
}

pub fn frame_count_closed_form() {
    assert_eq!(frame_count(22050, 2048, 512), 1 + (22050 - 2048) / 512);
    assert_eq!(frame_count(22050, 2048, 512), 40);
}

pub fn run_all() {
    mfcc_matches_brute_force_dct();
    stft_matches_direct_dft();
    centroid_of_440_within_one_bin();
    rmse_of_unit_sine();
    mel_argmax_of_440_is_nearest_center();
    mel_centers_hand_case();
    amplitude_scaling_laws();
    loud_half_has_larger_rmse_row();
    mixed_feature_is_deterministic();
    wav_decoding_matches_independent_writer();
    resampling_round_trip_keeps_energy();
    frame_count_closed_form();
}
