//! The 6x6 speller grid.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::STIMULI;

/// Symbols laid out row by row; row `r` and column `c` are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyboard {
    symbols: [char; STIMULI * STIMULI],
}

impl Default for Keyboard {
    fn default() -> Self {
        Self::new("ABCDEFGHIJKLMNOPQRSTUVWXYZ123456789_").expect("default layout is valid")
    }
}

impl Keyboard {
    /// Builds a grid from 36 distinct symbols in row-major order.
    pub fn new(layout: &str) -> Result<Self> {
        let chars: Vec<char> = layout.chars().collect();
        if chars.len() != STIMULI * STIMULI {
            return Err(Error::InvalidConfig(alloc::format!(
                "keyboard needs {} symbols, got {}",
                STIMULI * STIMULI,
                chars.len()
            )));
        }
        for (k, c) in chars.iter().enumerate() {
            if chars[..k].contains(c) {
                return Err(Error::InvalidConfig(alloc::format!("duplicate keyboard symbol {c:?}")));
            }
        }
        let mut symbols = ['\0'; STIMULI * STIMULI];
        symbols.copy_from_slice(&chars);
        Ok(Self { symbols })
    }

    pub fn layout(&self) -> String {
        self.symbols.iter().collect()
    }

    /// Symbol at 1-based `(row, column)`.
    pub fn symbol(&self, row: usize, column: usize) -> Option<char> {
        if (1..=STIMULI).contains(&row) && (1..=STIMULI).contains(&column) {
            Some(self.symbols[(row - 1) * STIMULI + column - 1])
        } else {
            None
        }
    }

    /// 1-based `(row, column)` of `symbol`; a space is looked up as `_`.
    pub fn position(&self, symbol: char) -> Option<(usize, usize)> {
        let wanted = if symbol == ' ' { '_' } else { symbol.to_ascii_uppercase() };
        self.symbols
            .iter()
            .position(|c| *c == wanted)
            .map(|k| (k / STIMULI + 1, k % STIMULI + 1))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}
