//! Embedded 5x7 lowercase bitmap font and its style variants.

const GLYPHS: [[&str; 7]; 26] = [
    [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"],
    ["#....", "#....", "####.", "#...#", "#...#", "#...#", "####."],
    [".....", ".....", ".####", "#....", "#....", "#....", ".####"],
    ["....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"],
    [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."],
    ["..##.", ".#...", "####.", ".#...", ".#...", ".#...", ".#..."],
    [".....", ".####", "#...#", "#...#", ".####", "....#", ".###."],
    ["#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#"],
    ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."],
    ["...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."],
    ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."],
    [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"],
    [".....", ".....", "####.", "#...#", "#...#", "#...#", "#...#"],
    [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."],
    [".....", "####.", "#...#", "#...#", "####.", "#....", "#...."],
    [".....", ".####", "#...#", "#...#", ".####", "....#", "....#"],
    [".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."],
    [".....", ".....", ".####", "#....", ".###.", "....#", "####."],
    [".#...", ".#...", "####.", ".#...", ".#...", ".#..#", "..##."],
    [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"],
    [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
    [".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."],
    [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"],
    [".....", "#...#", "#...#", "#...#", ".####", "....#", ".###."],
    [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"],
];

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

/// Style variants applied on top of the base bitmaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FontStyle {
    pub name: &'static str,
    /// Extra columns of horizontal dilation.
    pub bold: usize,
    /// Horizontal stretch factor.
    pub xscale: f64,
    /// Rightward lean per row, in glyph pixels.
    pub shear: f64,
}

pub const FONTS: [FontStyle; 4] = [
    FontStyle { name: "regular", bold: 0, xscale: 1.0, shear: 0.0 },
    FontStyle { name: "bold", bold: 1, xscale: 1.0, shear: 0.0 },
    FontStyle { name: "italic", bold: 0, xscale: 1.0, shear: 0.3 },
    FontStyle { name: "wide", bold: 0, xscale: 1.5, shear: 0.0 },
];

pub fn is_renderable(c: char) -> bool {
    c.is_ascii_lowercase()
}

/// Whether base glyph `c` has ink at integer cell `(x, y)`; callers pass a lowercase letter.
pub fn glyph_pixel(c: char, x: i64, y: i64) -> bool {
    if !(0..GLYPH_W as i64).contains(&x) || !(0..GLYPH_H as i64).contains(&y) {
        return false;
    }
    let g = &GLYPHS[(c as u8 - b'a') as usize];
    g[y as usize].as_bytes()[x as usize] == b'#'
}

impl FontStyle {
    /// Horizontal advance per character in unscaled glyph units.
    pub fn advance(&self) -> f64 {
        (GLYPH_W + self.bold + 1) as f64 * self.xscale
    }

    /// Width and height of `n` characters laid out in glyph units.
    pub fn extent(&self, n: usize) -> (f64, f64) {
        let w = n as f64 * self.advance() - self.xscale + self.shear * GLYPH_H as f64;
        (w, GLYPH_H as f64)
    }

    /// Ink test at continuous text coordinates `(u, v)`.
    pub fn ink(&self, text: &[char], u: f64, v: f64) -> bool {
        if v < 0.0 || v >= GLYPH_H as f64 {
            return false;
        }
        let u = u - self.shear * (GLYPH_H as f64 - v);
        if u < 0.0 {
            return false;
        }
        let adv = self.advance();
        let cell = (u / adv).floor() as usize;
        if cell >= text.len() {
            return false;
        }
        let gx = ((u - cell as f64 * adv) / self.xscale).floor() as i64;
        let gy = v.floor() as i64;
        (0..=self.bold as i64).any(|b| glyph_pixel(text[cell], gx - b, gy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_glyph_has_ink_and_is_distinct() {
        let bitmaps: Vec<String> = GLYPHS.iter().map(|g| g.concat()).collect();
        for (i, b) in bitmaps.iter().enumerate() {
            assert!(b.contains('#'));
            assert_eq!(b.len(), GLYPH_W * GLYPH_H);
            assert!(!bitmaps[..i].contains(b), "glyph {i} duplicated");
        }
    }

    #[test]
    fn bold_widens_strokes() {
        let text = ['l'];
        let regular = (0..60).filter(|&i| FONTS[0].ink(&text, (i % 6) as f64 + 0.5, (i / 6) as f64 * 0.7)).count();
        let bold = (0..60).filter(|&i| FONTS[1].ink(&text, (i % 6) as f64 + 0.5, (i / 6) as f64 * 0.7)).count();
        assert!(bold > regular);
    }
}
