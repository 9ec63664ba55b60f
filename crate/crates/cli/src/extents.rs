use std::fmt;
use std::str::FromStr;

use crate::Failure;

pub const ALIGN: usize = 32;

/// Spatial size written `HxW`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extents {
    pub h: usize,
    pub w: usize,
}

impl FromStr for Extents {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("`{s}` is not of the form HxW"))?;
        let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
        match (parse(h), parse(w)) {
            (Some(h), Some(w)) => Ok(Extents { h, w }),
            _ => Err(format!("`{s}` needs two positive integers, as in 512x1024")),
        }
    }
}

impl fmt::Display for Extents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.h, self.w)
    }
}

impl Extents {
    pub fn aligned(&self) -> bool {
        self.h.is_multiple_of(ALIGN) && self.w.is_multiple_of(ALIGN)
    }

    pub fn round_down(&self) -> Option<Extents> {
        let h = self.h / ALIGN * ALIGN;
        let w = self.w / ALIGN * ALIGN;
        (h > 0 && w > 0).then_some(Extents { h, w })
    }

    pub fn round_up(&self) -> Extents {
        Extents {
            h: self.h.div_ceil(ALIGN) * ALIGN,
            w: self.w.div_ceil(ALIGN) * ALIGN,
        }
    }

    /// Usage failure naming the nearest aligned sizes when not divisible by 32.
    pub fn require_aligned(&self, what: &str) -> Result<(), Failure> {
        if self.aligned() {
            return Ok(());
        }
        let up = self.round_up();
        let hint = match self.round_down() {
            Some(down) => format!("try {down} or {up}"),
            None => format!("try {up}"),
        };
        Err(Failure::new(
            "usage",
            format!("{what} {self} is not divisible by {ALIGN}; {hint}"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_suggest() {
        let e: Extents = "100x100".parse().unwrap();
        let msg = e.require_aligned("input").unwrap_err().detail;
        assert!(msg.contains("96x96") && msg.contains("128x128"), "{msg}");
        assert!("512x1024".parse::<Extents>().unwrap().require_aligned("input").is_ok());
        assert!("0x64".parse::<Extents>().is_err());
        assert!("64".parse::<Extents>().is_err());
        let small: Extents = "20x40".parse().unwrap();
        assert_eq!(small.require_aligned("input").unwrap_err().detail, "input 20x40 is not divisible by 32; try 32x64");
    }
}
