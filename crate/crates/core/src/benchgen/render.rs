use std::path::Path;

use super::scene::{SceneSpec, Shape};
use crate::encoders::PixelArray;
use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 128;

/// 8-bit RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_pixels(&self) -> PixelArray {
        PixelArray::from_rgb8(self.height, self.width, &self.data).expect("consistent size")
    }
}

/// Whether local pixel `(y, x)` of an `s × s` box is inside the shape.
/// Integer-only so rasters are identical everywhere.
pub fn covers(shape: Shape, s: usize, y: usize, x: usize) -> bool {
    let (s, y, x) = (s as i64, y as i64, x as i64);
    match shape {
        Shape::Square => true,
        Shape::Circle => {
            let (dx, dy) = (2 * x + 1 - s, 2 * y + 1 - s);
            dx * dx + dy * dy <= s * s
        }
        // apex at the top, base along the bottom row
        Shape::Triangle => (2 * x + 1 - s).abs() <= 2 * y + 1,
    }
}

pub fn render(scene: &SceneSpec) -> Image {
    let (h, w) = scene.canvas;
    let mut data = vec![BACKGROUND; h * w * 3];
    for o in &scene.objects {
        let b = scene.bbox(o);
        let rgb = o.color.rgb();
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                if covers(o.shape, o.size, y - b.y0, x - b.x0) {
                    let i = (y * w + x) * 3;
                    data[i..i + 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    Image {
        height: h,
        width: w,
        data,
    }
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let bad = |m: &str| Error::Format(format!("PPM: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    pos += 1; // single whitespace after maxval
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("only 8-bit P6 is supported"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let data = bytes.get(pos..).ok_or_else(|| bad("missing pixels"))?;
    if data.len() != width * height * 3 {
        return Err(bad("pixel payload has the wrong length"));
    }
    Ok(Image {
        height,
        width,
        data: data.to_vec(),
    })
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}
