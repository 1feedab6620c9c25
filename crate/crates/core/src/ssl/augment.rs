//! Seeded image augmentations on channels-first `[C, H, W]` images in `[0, 1]`.
//!
//! Operations run in a fixed order: random resized crop, flips, affine, color
//! jitter, blur, erasing. Each fires with its own probability. The output keeps
//! the input dimensions and value range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Weak,
    Strong,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub blur_p: f64,
    pub blur_sigma: (f64, f64),
    pub jitter_p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub affine_p: f64,
    pub max_rotation_deg: f64,
    /// Maximum shift as a fraction of the image side.
    pub max_translate: f64,
    pub scale: (f64, f64),
    pub crop_p: f64,
    /// Crop area as a fraction of the image area.
    pub crop_scale: (f64, f64),
    pub crop_ratio: (f64, f64),
    pub erase_p: f64,
    pub erase_scale: (f64, f64),
    pub erase_ratio: (f64, f64),
    pub erase_value: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self::weak()
    }
}

impl AugmentationPolicy {
    /// Every probability zero.
    pub fn identity() -> Self {
        Self {
            hflip_p: 0.0,
            vflip_p: 0.0,
            blur_p: 0.0,
            blur_sigma: (0.1, 1.0),
            jitter_p: 0.0,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            affine_p: 0.0,
            max_rotation_deg: 15.0,
            max_translate: 0.1,
            scale: (0.9, 1.1),
            crop_p: 0.0,
            crop_scale: (0.5, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            erase_p: 0.0,
            erase_scale: (0.02, 0.2),
            erase_ratio: (0.3, 3.3),
            erase_value: 0.0,
        }
    }

    /// Flips and blur.
    pub fn weak() -> Self {
        Self {
            hflip_p: 0.5,
            vflip_p: 0.5,
            blur_p: 0.5,
            ..Self::identity()
        }
    }

    /// Weak operations plus jitter, affine, crop and erasing.
    pub fn strong() -> Self {
        Self {
            jitter_p: 0.8,
            affine_p: 0.5,
            crop_p: 0.8,
            erase_p: 0.25,
            ..Self::weak()
        }
    }

    pub fn of_kind(kind: PolicyKind) -> Self {
        match kind {
            PolicyKind::Weak => Self::weak(),
            PolicyKind::Strong => Self::strong(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.hflip_p,
            self.vflip_p,
            self.blur_p,
            self.jitter_p,
            self.affine_p,
            self.crop_p,
            self.erase_p,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("augmentation probability outside [0, 1]".into()));
        }
        let range_ok = |(lo, hi): (f64, f64), max: f64| lo > 0.0 && lo <= hi && hi <= max;
        if !range_ok(self.crop_scale, 1.0) || !range_ok(self.crop_ratio, f64::INFINITY) {
            return Err(Error::InvalidConfig(format!(
                "degenerate crop parameters: scale {:?}, ratio {:?}",
                self.crop_scale, self.crop_ratio
            )));
        }
        if !range_ok(self.erase_scale, 1.0) || !range_ok(self.erase_ratio, f64::INFINITY) {
            return Err(Error::InvalidConfig("degenerate erasing parameters".into()));
        }
        if !range_ok(self.scale, f64::INFINITY) || !range_ok(self.blur_sigma, f64::INFINITY) {
            return Err(Error::InvalidConfig("degenerate affine scale or blur sigma".into()));
        }
        if !(0.0..=1.0).contains(&self.erase_value)
            || [self.brightness, self.contrast, self.saturation].iter().any(|v| !(0.0..1.0).contains(v))
        {
            return Err(Error::InvalidConfig("jitter strengths must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Apply `policy` to one `[C, H, W]` image; deterministic in `(image, policy, seed)`.
pub fn augment<T: Real>(image: &Tensor<T>, policy: &AugmentationPolicy, seed: u64) -> Result<Tensor<T>> {
    policy.validate()?;
    if image.ndim() != 3 {
        return shape_err(format!("augment expects [C, H, W], got {:?}", image.shape()));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Img {
        c,
        h,
        w,
        px: image.to_f64_vec(),
    };

    if fires(&mut rng, policy.crop_p) {
        img = random_resized_crop(&img, policy, &mut rng);
    }
    if fires(&mut rng, policy.hflip_p) {
        img = hflip(&img);
    }
    if fires(&mut rng, policy.vflip_p) {
        img = vflip(&img);
    }
    if fires(&mut rng, policy.affine_p) {
        img = random_affine(&img, policy, &mut rng);
    }
    if fires(&mut rng, policy.jitter_p) {
        color_jitter(&mut img, policy, &mut rng);
    }
    if fires(&mut rng, policy.blur_p) {
        let sigma = rng.gen_range(policy.blur_sigma.0..=policy.blur_sigma.1);
        img = gaussian_blur(&img, sigma);
    }
    if fires(&mut rng, policy.erase_p) {
        random_erase(&mut img, policy, &mut rng);
    }
    for v in &mut img.px {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::from_f64(&[c, h, w], &img.px)
}

fn fires(rng: &mut ChaCha8Rng, p: f64) -> bool {
    let u: f64 = rng.gen();
    u < p
}

#[derive(Clone, Debug)]
struct Img {
    c: usize,
    h: usize,
    w: usize,
    px: Vec<f64>,
}

impl Img {
    fn at(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.px[(ch * self.h + y) * self.w + x]
    }

    /// Bilinear sample at continuous pixel-centre coordinates; zero outside.
    fn sample(&self, ch: usize, y: f64, x: f64) -> f64 {
        if y < -0.5 || x < -0.5 || y > self.h as f64 - 0.5 || x > self.w as f64 - 0.5 {
            return 0.0;
        }
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.h - 1), (x0 + 1).min(self.w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = self.at(ch, y0, x0) * (1.0 - fx) + self.at(ch, y0, x1) * fx;
        let bottom = self.at(ch, y1, x0) * (1.0 - fx) + self.at(ch, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    fn map_coords(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Img {
        let mut px = vec![0.0; self.px.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let (sy, sx) = f(y as f64, x as f64);
                for ch in 0..self.c {
                    px[(ch * self.h + y) * self.w + x] = self.sample(ch, sy, sx);
                }
            }
        }
        Img { px, ..*self }
    }
}

fn hflip(img: &Img) -> Img {
    let mut px = img.px.clone();
    for row in px.chunks_mut(img.w) {
        row.reverse();
    }
    Img { px, ..*img }
}

fn vflip(img: &Img) -> Img {
    let mut px = Vec::with_capacity(img.px.len());
    for plane in img.px.chunks(img.h * img.w) {
        for row in plane.chunks(img.w).rev() {
            px.extend_from_slice(row);
        }
    }
    Img { px, ..*img }
}

fn random_resized_crop(img: &Img, p: &AugmentationPolicy, rng: &mut ChaCha8Rng) -> Img {
    let area = (img.h * img.w) as f64;
    let (lr0, lr1) = (p.crop_ratio.0.ln(), p.crop_ratio.1.ln());
    let mut window = (0.0, 0.0, img.h as f64, img.w as f64);
    for _ in 0..10 {
        let target = area * rng.gen_range(p.crop_scale.0..=p.crop_scale.1);
        let ratio = rng.gen_range(lr0..=lr1).exp();
        let cw = (target * ratio).sqrt();
        let ch = (target / ratio).sqrt();
        if cw <= img.w as f64 && ch <= img.h as f64 && cw >= 1.0 && ch >= 1.0 {
            let top = rng.gen_range(0.0..=img.h as f64 - ch);
            let left = rng.gen_range(0.0..=img.w as f64 - cw);
            window = (top, left, ch, cw);
            break;
        }
    }
    let (top, left, ch, cw) = window;
    let (sy, sx) = (ch / img.h as f64, cw / img.w as f64);
    img.map_coords(|y, x| (top + (y + 0.5) * sy - 0.5, left + (x + 0.5) * sx - 0.5))
}

fn random_affine(img: &Img, p: &AugmentationPolicy, rng: &mut ChaCha8Rng) -> Img {
    let angle = rng.gen_range(-p.max_rotation_deg..=p.max_rotation_deg).to_radians();
    let tx = rng.gen_range(-p.max_translate..=p.max_translate) * img.w as f64;
    let ty = rng.gen_range(-p.max_translate..=p.max_translate) * img.h as f64;
    let s = rng.gen_range(p.scale.0..=p.scale.1);
    let (cy, cx) = ((img.h as f64 - 1.0) / 2.0, (img.w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    // Inverse map: output pixel -> source pixel.
    img.map_coords(|y, x| {
        let (dx, dy) = (x - cx - tx, y - cy - ty);
        let sx = (cos * dx + sin * dy) / s + cx;
        let sy = (-sin * dx + cos * dy) / s + cy;
        (sy, sx)
    })
}

fn color_jitter(img: &mut Img, p: &AugmentationPolicy, rng: &mut ChaCha8Rng) {
    let b = rng.gen_range(1.0 - p.brightness..=1.0 + p.brightness);
    let c = rng.gen_range(1.0 - p.contrast..=1.0 + p.contrast);
    let s = rng.gen_range(1.0 - p.saturation..=1.0 + p.saturation);
    for v in &mut img.px {
        *v = (*v * b).clamp(0.0, 1.0);
    }
    let plane = img.h * img.w;
    let gray: Vec<f64> = (0..plane).map(|i| luminance(img, i)).collect();
    let mean = gray.iter().sum::<f64>() / plane as f64;
    for v in &mut img.px {
        *v = ((*v - mean) * c + mean).clamp(0.0, 1.0);
    }
    if img.c == 3 {
        let gray: Vec<f64> = (0..plane).map(|i| luminance(img, i)).collect();
        for ch in 0..3 {
            for (i, g) in gray.iter().enumerate() {
                let v = &mut img.px[ch * plane + i];
                *v = ((*v - g) * s + g).clamp(0.0, 1.0);
            }
        }
    }
}

fn luminance(img: &Img, i: usize) -> f64 {
    let plane = img.h * img.w;
    if img.c == 3 {
        0.299 * img.px[i] + 0.587 * img.px[plane + i] + 0.114 * img.px[2 * plane + i]
    } else {
        (0..img.c).map(|ch| img.px[ch * plane + i]).sum::<f64>() / img.c as f64
    }
}

fn gaussian_blur(img: &Img, sigma: f64) -> Img {
    let r = (2.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; img.px.len()];
    for ch in 0..img.c {
        for y in 0..img.h {
            for x in 0..img.w {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    acc += wgt * img.at(ch, y, clampi(x as isize + k as isize - r, img.w));
                }
                tmp[(ch * img.h + y) * img.w + x] = acc;
            }
        }
    }
    let mut px = vec![0.0; img.px.len()];
    for ch in 0..img.c {
        for y in 0..img.h {
            for x in 0..img.w {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let yy = clampi(y as isize + k as isize - r, img.h);
                    acc += wgt * tmp[(ch * img.h + yy) * img.w + x];
                }
                px[(ch * img.h + y) * img.w + x] = acc;
            }
        }
    }
    Img { px, ..*img }
}

fn random_erase(img: &mut Img, p: &AugmentationPolicy, rng: &mut ChaCha8Rng) {
    let area = (img.h * img.w) as f64;
    let (lr0, lr1) = (p.erase_ratio.0.ln(), p.erase_ratio.1.ln());
    for _ in 0..10 {
        let target = area * rng.gen_range(p.erase_scale.0..=p.erase_scale.1);
        let ratio = rng.gen_range(lr0..=lr1).exp();
        let eh = (target / ratio).sqrt().round() as usize;
        let ew = (target * ratio).sqrt().round() as usize;
        if eh >= 1 && ew >= 1 && eh <= img.h && ew <= img.w {
            let top = rng.gen_range(0..=img.h - eh);
            let left = rng.gen_range(0..=img.w - ew);
            for ch in 0..img.c {
                for y in top..top + eh {
                    for x in left..left + ew {
                        img.px[(ch * img.h + y) * img.w + x] = p.erase_value;
                    }
                }
            }
            return;
        }
    }
}
