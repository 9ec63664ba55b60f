//! Binary PPM (P6) / PGM (P5) images and class palettes.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::{Shape4, Tensor};

/// 8-bit image with `channels` interleaved samples per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !matches!(channels, 1 | 3) || data.len() != width * height * channels {
            return Err(Error::Format(format!(
                "{width}x{height} image with {channels} channels and {} bytes",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    fn magic(&self) -> &'static str {
        if self.channels == 3 {
            "P6"
        } else {
            "P5"
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "{}\n{} {}\n255\n", self.magic(), self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Read a P6 or P5 file with maxval 255.
    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let magic = header_token(&mut r)?;
        let channels = match magic.as_str() {
            "P6" => 3,
            "P5" => 1,
            other => return Err(Error::Format(format!("unsupported image magic `{other}`, expected P6 or P5"))),
        };
        let width = header_number(&mut r, "width")?;
        let height = header_number(&mut r, "height")?;
        let maxval = header_number(&mut r, "maxval")?;
        if maxval != 255 {
            return Err(Error::Format(format!("maxval {maxval}, only 8-bit (255) images are supported")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("empty image {width}x{height}")));
        }
        let mut data = vec![0u8; width * height * channels];
        r.read_exact(&mut data)
            .map_err(|_| Error::Format(format!("truncated pixel data for {width}x{height} {magic}")))?;
        Image::new(width, height, channels, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(f)
    }

    /// `(1, 3, h, w)` tensor with samples mapped to `v / 255 - 0.5`.
    pub fn to_tensor(&self) -> Result<Tensor> {
        if self.channels != 3 {
            return Err(Error::Format("expected an RGB (P6) image".into()));
        }
        let (w, c) = (self.width, self.channels);
        Tensor::from_fn(Shape4::new(1, 3, self.height, self.width)?, |_, ch, y, x| {
            self.data[(y * w + x) * c + ch] as f32 / 255.0 - 0.5
        })
    }

    /// Inverse of [`Image::to_tensor`] for the first batch item, clamped.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.c != 3 {
            return Err(Error::Format(format!("cannot write {s} as RGB")));
        }
        let mut data = Vec::with_capacity(s.h * s.w * 3);
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..3 {
                    data.push(((t.at(0, c, y, x) + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Image::new(s.w, s.h, 3, data)
    }

    /// Grayscale image of the first label map in the batch.
    pub fn from_labels(labels: &LabelMap) -> Result<Self> {
        let plane = labels.plane();
        let data = labels.data[..plane]
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit in 8 bits"))))
            .collect::<Result<_>>()?;
        Image::new(labels.w, labels.h, 1, data)
    }

    pub fn to_labels(&self) -> Result<LabelMap> {
        if self.channels != 1 {
            return Err(Error::Format("expected a grayscale (P5) label image".into()));
        }
        LabelMap::new(1, self.height, self.width, self.data.iter().map(|&v| v as u32).collect())
    }
}

fn header_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8];
        if r.read(&mut b)? == 0 {
            if tok.is_empty() {
                return Err(Error::Format("truncated image header".into()));
            }
            break;
        }
        match b[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    String::from_utf8(tok).map_err(|_| Error::Format("non-ASCII image header".into()))
}

fn header_number<R: BufRead>(r: &mut R, what: &str) -> Result<usize> {
    let tok = header_token(r)?;
    tok.parse()
        .map_err(|_| Error::Format(format!("image header {what} `{tok}` is not a number")))
}

/// RGB color per class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

/// Cityscapes training-class colors.
const CITYSCAPES_COLORS: [[u8; 3]; 19] = [
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [102, 102, 156],
    [190, 153, 153],
    [153, 153, 153],
    [250, 170, 30],
    [220, 220, 0],
    [107, 142, 35],
    [152, 251, 152],
    [70, 130, 180],
    [220, 20, 60],
    [255, 0, 0],
    [0, 0, 142],
    [0, 0, 70],
    [0, 60, 100],
    [0, 80, 100],
    [0, 0, 230],
    [119, 11, 32],
];

impl Palette {
    /// Cityscapes colors for the first 19 ids, then a deterministic hash color.
    pub fn default_for(num_classes: usize) -> Self {
        let colors = (0..num_classes)
            .map(|c| {
                CITYSCAPES_COLORS.get(c).copied().unwrap_or_else(|| {
                    let h = (c as u32).wrapping_mul(2654435761);
                    [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
                })
            })
            .collect();
        Palette { colors }
    }

    /// One `classid R G B` line per class; blank lines and `#` comments allowed.
    /// Ids must cover `0..n` exactly once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Option<[u8; 3]>> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| Error::Parse { line: i + 1, detail };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(err(format!("expected `classid R G B`, got `{line}`")));
            }
            let id: usize = fields[0].parse().map_err(|_| err(format!("class id `{}`", fields[0])))?;
            let mut rgb = [0u8; 3];
            for (k, f) in fields[1..].iter().enumerate() {
                rgb[k] = f.parse().map_err(|_| err(format!("color component `{f}` is not in 0..=255")))?;
            }
            if id >= entries.len() {
                entries.resize(id + 1, None);
            }
            if entries[id].replace(rgb).is_some() {
                return Err(err(format!("class id {id} listed twice")));
            }
        }
        if entries.is_empty() {
            return Err(Error::Parse { line: 0, detail: "palette has no entries".into() });
        }
        let colors = entries
            .iter()
            .enumerate()
            .map(|(id, c)| c.ok_or_else(|| Error::Parse { line: 0, detail: format!("palette is missing class id {id}") }))
            .collect::<Result<_>>()?;
        Ok(Palette { colors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.colors
            .iter()
            .enumerate()
            .map(|(i, [r, g, b])| format!("{i} {r} {g} {b}\n"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, class: usize) -> Option<[u8; 3]> {
        self.colors.get(class).copied()
    }

    /// RGB rendering of the first label map in the batch.
    pub fn colorize(&self, labels: &LabelMap) -> Result<Image> {
        let mut data = Vec::with_capacity(labels.plane() * 3);
        for &l in &labels.data[..labels.plane()] {
            let c = self.color(l as usize).ok_or_else(|| {
                Error::Usage(format!("palette has {} colors, label {l} has none", self.len()))
            })?;
            data.extend_from_slice(&c);
        }
        Image::new(labels.w, labels.h, 3, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_with_comment() {
        let img = Image::new(2, 1, 3, vec![1, 2, 3, 250, 251, 252]).unwrap();
        let mut buf = Vec::new();
        img.write(&mut buf).unwrap();
        assert_eq!(Image::read(&buf[..]).unwrap(), img);
        let commented = b"P6\n# made by hand\n2 1\n255\n\x01\x02\x03\xfa\xfb\xfc";
        assert_eq!(Image::read(&commented[..]).unwrap(), img);
    }

    #[test]
    fn pgm_labels_round_trip() {
        let labels = LabelMap::new(1, 2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let img = Image::from_labels(&labels).unwrap();
        let mut buf = Vec::new();
        img.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(Image::read(&buf[..]).unwrap().to_labels().unwrap(), labels);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(matches!(Image::read(&b"P3\n1 1\n255\n"[..]), Err(Error::Format(_))));
        assert!(matches!(Image::read(&b"P6\n1 1\n65535\n"[..]), Err(Error::Format(_))));
        assert!(matches!(Image::read(&b"P6\n2 2\n255\n\x00"[..]), Err(Error::Format(_))));
        assert!(matches!(Image::read(&b""[..]), Err(Error::Format(_))));
    }

    #[test]
    fn palette_parse_and_colorize() {
        let p = Palette::parse("# classes\n1 0 255 0\n0 255 0 0\n").unwrap();
        assert_eq!(p.len(), 2);
        let img = p.colorize(&LabelMap::new(1, 1, 2, vec![1, 0]).unwrap()).unwrap();
        assert_eq!(img.data, vec![0, 255, 0, 255, 0, 0]);
        assert_eq!(Palette::parse(&p.to_text()).unwrap(), p);
        assert!(matches!(Palette::parse("0 1 2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Palette::parse("0 1 2 300\n"), Err(Error::Parse { line: 1, .. })));
        assert!(Palette::parse("1 1 2 3\n").is_err());
    }
}
