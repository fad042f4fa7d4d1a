// SPDX-License-Identifier: Apache-2.0
//! Line-structured participant summaries.
//!
//! A summary is a sequence of `<Name>:` header lines, each followed by free
//! text. Five sections are required; a section whose body is just
//! `unrecorded` counts as present but empty.

use std::collections::BTreeMap;
use std::fmt;

use super::TextError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Section {
    BasicInformation,
    MedicalHistory,
    PhysicalStatus,
    DailyBehavior,
    LanguageProficiency,
}

impl Section {
    pub const ALL: [Section; 5] = [
        Section::BasicInformation,
        Section::MedicalHistory,
        Section::PhysicalStatus,
        Section::DailyBehavior,
        Section::LanguageProficiency,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Section::BasicInformation => "Basic Information",
            Section::MedicalHistory => "Medical History and Neurological Assessment",
            Section::PhysicalStatus => "Physical Status",
            Section::DailyBehavior => "Daily Behavior",
            Section::LanguageProficiency => "Language Proficiency",
        }
    }

    fn from_header(name: &str) -> Option<Section> {
        let norm = name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        Section::ALL.into_iter().find(|s| s.title().to_lowercase() == norm)
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SectionBody {
    Text(String),
    Unrecorded,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SummaryRecord {
    pub sections: BTreeMap<Section, SectionBody>,
    /// Headers outside the canonical set, in document order.
    pub extra: Vec<(String, String)>,
}

impl SummaryRecord {
    pub fn text(&self, section: Section) -> Option<&str> {
        match self.sections.get(&section)? {
            SectionBody::Text(t) => Some(t),
            SectionBody::Unrecorded => None,
        }
    }

    pub fn is_unrecorded(&self, section: Section) -> bool {
        matches!(self.sections.get(&section), Some(SectionBody::Unrecorded))
    }

    /// Bodies of the recorded sections in canonical order, then extras.
    /// Headers and unrecorded sections contribute nothing.
    pub fn body_text(&self) -> String {
        let mut parts: Vec<&str> = Section::ALL.iter().filter_map(|&s| self.text(s)).collect();
        parts.extend(self.extra.iter().map(|(_, body)| body.as_str()));
        parts.join("\n")
    }
}

fn is_unrecorded(body: &str) -> bool {
    let b = body.trim().trim_end_matches('.').trim();
    b.eq_ignore_ascii_case("unrecorded")
}

pub fn validate_summary(text: &str) -> Result<SummaryRecord, TextError> {
    let mut record = SummaryRecord::default();
    let mut bodies: Vec<(Option<Section>, String, Vec<&str>)> = Vec::new();

    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(header) = trimmed.strip_suffix(':') {
            let header = header.trim();
            if !header.is_empty() {
                bodies.push((Section::from_header(header), header.to_string(), Vec::new()));
                continue;
            }
        }
        if let Some(last) = bodies.last_mut() {
            if !trimmed.is_empty() {
                last.2.push(trimmed);
            }
        }
    }

    for (section, name, lines) in bodies {
        let body = lines.join("\n");
        match section {
            Some(s) => {
                let value = if is_unrecorded(&body) {
                    SectionBody::Unrecorded
                } else {
                    SectionBody::Text(body)
                };
                record.sections.entry(s).or_insert(value);
            }
            None => record.extra.push((name, body)),
        }
    }

    let missing: Vec<String> = Section::ALL
        .into_iter()
        .filter(|s| !record.sections.contains_key(s))
        .map(|s| s.title().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(TextError::MissingRequiredSection(missing));
    }
    Ok(record)
}
