//! The five-option anticipated-agreement scale.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One answer option. Ordinal values run A=0 through E=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    C,
    D,
    E,
}

impl Choice {
    pub const ALL: [Choice; 5] = [Choice::A, Choice::B, Choice::C, Choice::D, Choice::E];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn letter(self) -> char {
        (b'A' + self.value()) as char
    }

    pub fn display(self) -> &'static str {
        match self {
            Choice::A => "<1%",
            Choice::B => "5%-25%",
            Choice::C => "50%",
            Choice::D => "75%-90%",
            Choice::E => ">90%",
        }
    }

    pub fn from_value(value: u8) -> Option<Choice> {
        Choice::ALL.get(usize::from(value)).copied()
    }

    /// Uppercase letters only.
    pub fn from_letter(letter: char) -> Option<Choice> {
        match letter {
            'A'..='E' => Choice::from_value(letter as u8 - b'A'),
            _ => None,
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Choice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => {
                Choice::from_letter(c).ok_or_else(|| format!("answer letter {s:?} is not one of A-E"))
            }
            _ => Err(format!("answer letter {s:?} is not one of A-E")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScaleOption {
    pub choice: Choice,
    pub label: char,
    pub display: &'static str,
    pub value: u8,
}

/// Ordered option list used by the extraction and scoring stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrdinalScale {
    options: [ScaleOption; 5],
}

impl OrdinalScale {
    pub fn standard() -> Self {
        let options = Choice::ALL.map(|choice| ScaleOption {
            choice,
            label: choice.letter(),
            display: choice.display(),
            value: choice.value(),
        });
        OrdinalScale { options }
    }

    pub fn options(&self) -> &[ScaleOption] {
        &self.options
    }

    pub fn by_label(&self, label: char) -> Option<&ScaleOption> {
        self.options.iter().find(|o| o.label == label)
    }

    pub fn by_value(&self, value: u8) -> Option<&ScaleOption> {
        self.options.iter().find(|o| o.value == value)
    }

    /// Largest possible distance between two answers on this scale.
    pub fn max_distance(&self) -> f64 {
        f64::from(self.options[4].value - self.options[0].value)
    }
}

impl Default for OrdinalScale {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_options_in_order() {
        let scale = OrdinalScale::standard();
        let values: Vec<u8> = scale.options().iter().map(|o| o.value).collect();
        assert_eq!(values, vec![0, 1, 2, 3, 4]);
        let displays: Vec<&str> = scale.options().iter().map(|o| o.display).collect();
        assert_eq!(displays, vec!["<1%", "5%-25%", "50%", "75%-90%", ">90%"]);
        assert_eq!(scale.max_distance(), 4.0);
    }

    #[test]
    fn label_value_mapping_is_bijective() {
        let scale = OrdinalScale::standard();
        for opt in scale.options() {
            assert_eq!(scale.by_label(opt.label), Some(opt));
            assert_eq!(scale.by_value(opt.value), Some(opt));
            assert_eq!(Choice::from_letter(opt.label), Some(opt.choice));
        }
        assert_eq!(Choice::from_letter('F'), None);
        assert_eq!(Choice::from_letter('a'), None);
        assert!("F".parse::<Choice>().is_err());
        assert!("AB".parse::<Choice>().is_err());
        assert_eq!("D".parse::<Choice>(), Ok(Choice::D));
    }
}
