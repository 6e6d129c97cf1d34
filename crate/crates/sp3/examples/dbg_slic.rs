use sp3::slic::*;
use sp3::synth::*;

fn main() {
    let spec = SynthSpec { family: ShapeFamily::IrregularBlob, size: 32, noise_sigma: 0.10, train: 6, val: 2, test: 2, seed: 4 };
    let samples = generate_samples(&spec).unwrap();
    let s = &samples[0];
    for n in [40usize, 64] {
        let sp = slic_segment(&s.image, n, 0.1, 10, 0).unwrap();
        let hist = superpixel_class_histogram(&sp, &s.truth).unwrap();
        let mut impure = 0;
        let mut impure_px = 0;
        for (j, h) in hist.iter().enumerate() {
            let m = sp.sizes()[j];
            let dom = *h.counts.iter().max().unwrap();
            if (dom as f64) < 0.9 * m as f64 { impure += 1; impure_px += m - dom; }
        }
        println!("n {n}: realized {} impure sp {impure} impure px {impure_px}", sp.n());
    }
    // ascii render truth vs sp boundaries for n=40
    let sp = slic_segment(&s.image, 40, 0.1, 10, 0).unwrap();
    for r in 0..32 {
        let mut line = String::new();
        for c in 0..32 {
            let t = s.truth.get(r, c);
            line.push(if t == 1 { '#' } else { '.' });
        }
        line.push(' ');
        for c in 0..32 {
            let px = r * 32 + c;
            let id = sp.sp_ids()[px];
            let boundary = (c + 1 < 32 && sp.sp_ids()[px + 1] != id) || (r + 1 < 32 && sp.sp_ids()[px + 32] != id);
            line.push(if boundary { '+' } else { ' ' });
        }
        println!("{line}");
    }
}
