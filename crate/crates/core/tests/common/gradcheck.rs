//! Central finite differences against every hand-written backward pass.

use rand::Rng;
use svkit::frontend::FeatureMatrix;
use svkit::modelmath::*;
use svkit::seed;
use svkit::trainer::{build_head, EncoderParams, EncoderShape, PoolingKind};

const H: f64 = 1e-6;
const REL: f64 = 1e-4;
const REL_NETWORK: f64 = 1e-3;
const CASES: usize = 100;

pub type Check = Result<(), String>;

fn close(analytic: f64, numeric: f64, rel: f64) -> bool {
    // the absolute floor only matters for components that are ~0
    (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs()) + 1e-8
}

fn check_rel(what: &str, rel: f64, analytic: &[f64], mut f: impl FnMut(usize, f64) -> f64) -> Check {
    for (i, &a) in analytic.iter().enumerate() {
        let n = (f(i, H) - f(i, -H)) / (2.0 * H);
        if !close(a, n, rel) {
            return Err(format!("{what}[{i}]: analytic {a} numeric {n}"));
        }
    }
    Ok(())
}

fn check(what: &str, analytic: &[f64], f: impl FnMut(usize, f64) -> f64) -> Check {
    check_rel(what, REL, analytic, f)
}

fn uniform(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn frames(t: usize, c: usize, rng: &mut impl Rng) -> FrameFeatures {
    FrameFeatures::new(uniform(t * c, rng), c).unwrap()
}

pub fn am_softmax() -> Check {
    let mut rng = seed::substream(1, "am");
    for _ in 0..CASES {
        let cos: Vec<f64> = uniform(7, &mut rng).iter().map(|v| 0.9 * v).collect();
        let y = rng.random_range(0..7);
        let (_, g) = am_softmax_loss(&cos, y, 30.0, 0.2);
        check("am", &g, |i, d| {
            let mut c = cos.clone();
            c[i] += d;
            am_softmax_loss(&c, y, 30.0, 0.2).0
        })?;
    }
    Ok(())
}

pub fn aam_softmax() -> Check {
    let mut rng = seed::substream(2, "aam");
    for m in [0.2, 0.5] {
        let mut done = 0;
        while done < CASES {
            let cos: Vec<f64> = uniform(6, &mut rng).iter().map(|v| 0.95 * v).collect();
            let y = rng.random_range(0..6);
            // keep away from the kink where the fallback takes over
            if (cos[y] - (std::f64::consts::PI - m).cos()).abs() < 1e-3 {
                continue;
            }
            done += 1;
            let (_, g) = aam_softmax_loss(&cos, y, 30.0, m);
            check("aam", &g, |i, d| {
                let mut c = cos.clone();
                c[i] += d;
                aam_softmax_loss(&c, y, 30.0, m).0
            })?;
        }
    }
    let cos = vec![-0.99, 0.3, -0.2];
    let (_, g) = aam_softmax_loss(&cos, 0, 10.0, 0.5);
    check("aam-fallback", &g, |i, d| {
        let mut c = cos.clone();
        c[i] += d;
        aam_softmax_loss(&c, 0, 10.0, 0.5).0
    })
}

pub fn subcenter() -> Check {
    let mut rng = seed::substream(3, "sub");
    let (j, k, e) = (4, 3, 5);
    for _ in 0..CASES {
        let x = uniform(e, &mut rng);
        let head = SpeakerHead::new(j, k, e, uniform(j * k * e, &mut rng), vec![false; j], 30.0, 0.0).unwrap();
        let r = uniform(j, &mut rng);
        let objective = |x: &[f64], h: &SpeakerHead| -> f64 {
            subcenter_cosine(x, h).unwrap().iter().zip(&r).map(|(c, r)| c * r).sum()
        };
        let fwd = subcenter_forward(&x, &head).unwrap();
        let mut gw = vec![0.0; j * k * e];
        let gx = subcenter_backward(&x, &head, &fwd, &r, &mut gw);
        check("subcenter dx", &gx, |i, d| {
            let mut xx = x.clone();
            xx[i] += d;
            objective(&xx, &head)
        })?;
        check("subcenter dW", &gw, |i, d| {
            let mut h = head.clone();
            h.weights_mut()[i] += d;
            objective(&x, &h)
        })?;
    }
    Ok(())
}

pub fn gsp_pooling() -> Check {
    let mut rng = seed::substream(4, "gsp");
    for _ in 0..CASES {
        let h = frames(6, 4, &mut rng);
        let r = uniform(8, &mut rng);
        let g = gsp_backward(&h, &r);
        check("gsp", &g, |i, d| {
            let mut hh = h.clone();
            hh.as_mut_slice()[i] += d;
            gsp(&hh).iter().zip(&r).map(|(a, b)| a * b).sum()
        })?;
    }
    Ok(())
}

pub fn mqmha_pooling() -> Check {
    let mut rng = seed::substream(5, "mqmha");
    for case in 0..CASES {
        let (q, heads) = [(1, 1), (2, 2), (3, 4), (2, 8)][case % 4];
        let h = frames(7, 8, &mut rng);
        let p = MqmhaParams::random(q, heads, 8, 0.7, &mut rng).unwrap();
        let r = uniform(p.out_dim(), &mut rng);
        let cache = mqmha_forward(&h, &p).unwrap();
        let (gh, gv) = mqmha_backward(&h, &p, &cache, &r);
        let objective = |h: &FrameFeatures, p: &MqmhaParams| -> f64 {
            mqmha(h, p).unwrap().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        check("mqmha dh", &gh, |i, d| {
            let mut hh = h.clone();
            hh.as_mut_slice()[i] += d;
            objective(&hh, &p)
        })?;
        check("mqmha dv", &gv, |i, d| {
            let mut pp = p.clone();
            pp.vectors[i] += d;
            objective(&h, &pp)
        })?;
    }
    Ok(())
}

fn network_check(pooling: PoolingKind, loss: MarginLoss, s: u64) -> Check {
    let mut rng = seed::substream(s, "net");
    let shape = EncoderShape { input_dim: 6, hidden: 5, channels: 4 };
    let e = match pooling {
        PoolingKind::Gsp => 8,
        PoolingKind::Mqmha { queries, .. } => 8 * queries,
    };
    let mut head = build_head(3, 1, 2, e, &mut rng).unwrap();
    head.scale = 10.0;
    let params = EncoderParams::random(shape, pooling, head, &mut rng).unwrap();
    // two speakers, one utterance each
    let xs: Vec<FeatureMatrix> =
        (0..2).map(|_| FeatureMatrix::new(uniform(5 * 6, &mut rng), 6, 0.01).unwrap()).collect();
    let batch = [(&xs[0], 0), (&xs[1], 2)];
    let (_, grads) = params.batch_loss_grad(&batch, loss, 0.2).unwrap();
    let base = params.flat();
    check_rel("network", REL_NETWORK, &grads.flat(), |i, d| {
        let mut p = params.clone();
        let mut v = base.clone();
        v[i] += d;
        p.set_flat(&v);
        p.batch_loss(&batch, loss, 0.2).unwrap()
    })
}

pub fn network_gsp_am() -> Check {
    (0..CASES as u64).try_for_each(|s| network_check(PoolingKind::Gsp, MarginLoss::Am, s))
}

pub fn network_mqmha_aam() -> Check {
    (0..CASES as u64)
        .try_for_each(|s| network_check(PoolingKind::Mqmha { queries: 2, heads: 2 }, MarginLoss::Aam, 1000 + s))
}

pub const SUITE: &[(&str, fn() -> Check)] = &[
    ("AM softmax", am_softmax),
    ("AAM softmax", aam_softmax),
    ("sub-center cosine", subcenter),
    ("GSP", gsp_pooling),
    ("MQMHA", mqmha_pooling),
    ("network GSP+AM", network_gsp_am),
    ("network MQMHA+AAM", network_mqmha_aam),
];
