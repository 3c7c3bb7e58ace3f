//! TD3 (passport) machine-readable zone.
//!
//! Two lines of 44 characters over `[A-Z0-9<]`. Check digits use weights
//! 7, 3, 1 repeating over character values `0-9 -> 0-9`, `A-Z -> 10-35`,
//! `< -> 0`, summed mod 10.

use serde::{Deserialize, Serialize};
use zeroize::Zeroize;

pub const TD3_LINE_LEN: usize = 44;
const NAME_FIELD_LEN: usize = 39;
const WEIGHTS: [u32; 3] = [7, 3, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MrzField {
    DocumentNumber,
    BirthDate,
    ExpiryDate,
    OptionalData,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MrzError {
    #[error("MRZ format: {0}")]
    MrzFormat(String),
    #[error("MRZ check digit failed for {0:?}")]
    MrzChecksum(MrzField),
    #[error("MRZ date invalid in {0:?}")]
    MrzDate(MrzField),
}

pub fn char_value(c: u8) -> Option<u32> {
    match c {
        b'0'..=b'9' => Some(u32::from(c - b'0')),
        b'A'..=b'Z' => Some(u32::from(c - b'A') + 10),
        b'<' => Some(0),
        _ => None,
    }
}

/// Check digit of `field`. Characters outside the MRZ alphabet count as 0;
/// callers validate the alphabet first.
pub fn check_digit(field: &[u8]) -> u8 {
    let sum: u32 = field
        .iter()
        .zip(WEIGHTS.iter().cycle())
        .map(|(&c, w)| char_value(c).unwrap_or(0) * w)
        .sum();
    (sum % 10) as u8
}

fn digit_at(line: &[u8], index: usize) -> Option<u8> {
    line[index].is_ascii_digit().then(|| line[index] - b'0')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
    Unspecified,
}

/// `YYMMDD` as printed; the century is resolved by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MrzDate {
    pub yy: u8,
    pub month: u8,
    pub day: u8,
}

impl MrzDate {
    fn parse(raw: &[u8], field: MrzField) -> Result<Self, MrzError> {
        if !raw.iter().all(u8::is_ascii_digit) {
            return Err(MrzError::MrzDate(field));
        }
        let n = |i: usize| (raw[i] - b'0') * 10 + (raw[i + 1] - b'0');
        let date = Self { yy: n(0), month: n(2), day: n(4) };
        let max_day = match date.month {
            1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
            4 | 6 | 9 | 11 => 30,
            2 if date.yy % 4 == 0 => 29,
            2 => 28,
            _ => return Err(MrzError::MrzDate(field)),
        };
        if date.day == 0 || date.day > max_day {
            return Err(MrzError::MrzDate(field));
        }
        Ok(date)
    }

    pub fn with_century(&self, year: i32) -> Option<time::Date> {
        let month = time::Month::try_from(self.month).ok()?;
        time::Date::from_calendar_date(year, month, self.day).ok()
    }

    /// Birth dates pivot on the reference year: a two-digit year above the
    /// reference's falls in the previous century.
    pub fn as_birth_date(&self, reference_year: i32) -> Option<time::Date> {
        let century = reference_year - reference_year.rem_euclid(100);
        let year = century + i32::from(self.yy);
        let year = if year > reference_year { year - 100 } else { year };
        self.with_century(year)
    }

    pub fn as_expiry_date(&self) -> Option<time::Date> {
        self.with_century(2000 + i32::from(self.yy))
    }

    fn digits(&self) -> String {
        format!("{:02}{:02}{:02}", self.yy, self.month, self.day)
    }
}

/// Parsed TD3 MRZ. Text fields are wiped from memory on drop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MrzRecord {
    pub document_type: String,
    pub issuing_state: String,
    pub surname: String,
    pub given_names: String,
    pub document_number: String,
    pub document_number_check: u8,
    pub nationality: String,
    pub birth_date: MrzDate,
    pub birth_date_check: u8,
    pub sex: Sex,
    pub expiry_date: MrzDate,
    pub expiry_date_check: u8,
    pub optional_data: String,
    pub composite_check: u8,
}

impl Drop for MrzRecord {
    fn drop(&mut self) {
        self.surname.zeroize();
        self.given_names.zeroize();
        self.document_number.zeroize();
        self.optional_data.zeroize();
        self.nationality.zeroize();
        self.issuing_state.zeroize();
    }
}

impl MrzRecord {
    pub fn full_name(&self) -> String {
        if self.given_names.is_empty() {
            self.surname.clone()
        } else {
            format!("{} {}", self.given_names, self.surname)
        }
    }

    /// Re-derives every check digit from the decoded fields.
    pub fn is_consistent(&self) -> bool {
        let doc = pad(&self.document_number, 9);
        let birth = self.birth_date.digits();
        let expiry = self.expiry_date.digits();
        let optional = pad(&self.optional_data, 14);
        let optional_check = optional_check_char(&optional);
        let composite = format!(
            "{doc}{}{birth}{}{expiry}{}{optional}{}",
            self.document_number_check, self.birth_date_check, self.expiry_date_check, optional_check as char
        );
        check_digit(doc.as_bytes()) == self.document_number_check
            && check_digit(birth.as_bytes()) == self.birth_date_check
            && check_digit(expiry.as_bytes()) == self.expiry_date_check
            && check_digit(composite.as_bytes()) == self.composite_check
    }
}

fn pad(field: &str, len: usize) -> String {
    let mut s = field.replace(' ', "<");
    s.truncate(len);
    while s.len() < len {
        s.push('<');
    }
    s
}

fn unpad(field: &[u8]) -> String {
    String::from_utf8_lossy(field).trim_end_matches('<').replace('<', " ")
}

fn optional_check_char(optional: &str) -> u8 {
    if optional.bytes().all(|b| b == b'<') {
        b'<'
    } else {
        b'0' + check_digit(optional.as_bytes())
    }
}

pub fn parse_mrz(line1: &str, line2: &str) -> Result<MrzRecord, MrzError> {
    let (l1, l2) = (line1.as_bytes(), line2.as_bytes());
    for (n, line) in [(1, l1), (2, l2)] {
        if line.len() != TD3_LINE_LEN {
            return Err(MrzError::MrzFormat(format!("line {n} has {} characters, expected 44", line.len())));
        }
        if let Some(bad) = line.iter().position(|&c| char_value(c).is_none()) {
            return Err(MrzError::MrzFormat(format!("line {n} has an invalid character at position {}", bad + 1)));
        }
    }
    if l1[0] != b'P' {
        return Err(MrzError::MrzFormat("not a TD3 passport document".into()));
    }

    let checked = |range: std::ops::Range<usize>, at: usize, field: MrzField| -> Result<u8, MrzError> {
        let stored = digit_at(l2, at).ok_or(MrzError::MrzChecksum(field))?;
        if check_digit(&l2[range]) != stored {
            return Err(MrzError::MrzChecksum(field));
        }
        Ok(stored)
    };
    let document_number_check = checked(0..9, 9, MrzField::DocumentNumber)?;
    let birth_date_check = checked(13..19, 19, MrzField::BirthDate)?;
    let expiry_date_check = checked(21..27, 27, MrzField::ExpiryDate)?;

    // An all-filler optional field may carry '<' or 0 as its check digit.
    let optional = &l2[28..42];
    let filler_only = optional.iter().all(|&b| b == b'<');
    let optional_ok = match l2[42] {
        b'<' => filler_only,
        b'0'..=b'9' => check_digit(optional) == l2[42] - b'0',
        _ => false,
    };
    if !optional_ok {
        return Err(MrzError::MrzChecksum(MrzField::OptionalData));
    }

    let composite: Vec<u8> = [&l2[0..10], &l2[13..20], &l2[21..43]].concat();
    let composite_check = digit_at(l2, 43).ok_or(MrzError::MrzChecksum(MrzField::Composite))?;
    if check_digit(&composite) != composite_check {
        return Err(MrzError::MrzChecksum(MrzField::Composite));
    }

    let birth_date = MrzDate::parse(&l2[13..19], MrzField::BirthDate)?;
    let expiry_date = MrzDate::parse(&l2[21..27], MrzField::ExpiryDate)?;
    let sex = match l2[20] {
        b'F' => Sex::Female,
        b'M' => Sex::Male,
        b'<' => Sex::Unspecified,
        _ => return Err(MrzError::MrzFormat("invalid sex marker".into())),
    };

    let name = &l1[5..44];
    let (surname, given) = match name.windows(2).position(|w| w == b"<<") {
        Some(split) => (&name[..split], &name[split + 2..]),
        None => (name, &name[name.len()..]),
    };

    Ok(MrzRecord {
        document_type: unpad(&l1[0..2]),
        issuing_state: unpad(&l1[2..5]),
        surname: unpad(surname),
        given_names: unpad(given),
        document_number: unpad(&l2[0..9]),
        document_number_check,
        nationality: unpad(&l2[10..13]),
        birth_date,
        birth_date_check,
        sex,
        expiry_date,
        expiry_date_check,
        optional_data: unpad(optional),
        composite_check,
    })
}

/// Field values for building a TD3 MRZ with correct check digits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Td3Document {
    pub issuing_state: String,
    pub surname: String,
    pub given_names: String,
    pub document_number: String,
    pub nationality: String,
    /// `YYMMDD`
    pub birth_date: String,
    pub sex: char,
    /// `YYMMDD`
    pub expiry_date: String,
    pub optional_data: String,
}

impl Td3Document {
    pub fn to_lines(&self) -> (String, String) {
        let mut name = pad(&self.surname, NAME_FIELD_LEN);
        if !self.given_names.is_empty() {
            name = pad(&format!("{}<<{}", self.surname, self.given_names), NAME_FIELD_LEN);
        }
        let line1 = format!("P<{}{}", pad(&self.issuing_state, 3), name);

        let doc = pad(&self.document_number, 9);
        let optional = pad(&self.optional_data, 14);
        let mut line2 = format!(
            "{doc}{}{}{}{}{}{}{}{}{}",
            check_digit(doc.as_bytes()),
            pad(&self.nationality, 3),
            self.birth_date,
            check_digit(self.birth_date.as_bytes()),
            self.sex,
            self.expiry_date,
            check_digit(self.expiry_date.as_bytes()),
            optional,
            optional_check_char(&optional) as char,
        );
        let b = line2.as_bytes();
        let composite: Vec<u8> = [&b[0..10], &b[13..20], &b[21..43]].concat();
        line2.push((b'0' + check_digit(&composite)) as char);
        (line1, line2)
    }
}
