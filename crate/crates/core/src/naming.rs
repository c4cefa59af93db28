//! Hierarchical microservice names.
//!
//! A name carries a three-component region (country, city, district), the
//! microservice being requested and its ordered input parameters:
//!
//! ```text
//! FE:/Korea/Seoul/Itaewon|traffic_status?param1,param2
//! ```
//!
//! Whitespace around `|`, `?` and `,` is accepted on input and never emitted.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const SCHEME: &str = "FE:/";

/// Inputs longer than this are rejected outright.
pub const MAX_NAME_LEN: usize = 4096;

const RESERVED: [char; 4] = ['/', '|', '?', ','];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("malformed name: {0}")]
    Malformed(&'static str),
}

fn malformed<T>(why: &'static str) -> Result<T, NameError> {
    Err(NameError::Malformed(why))
}

/// A parsed, validated microservice name. Construct with [`parse_name`] or
/// [`FeName::new`]; every instance satisfies the component rules.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeName {
    region: [String; 3],
    microservice: String,
    params: Vec<String>,
}

fn check_component(c: &str) -> Result<(), NameError> {
    if c.is_empty() {
        return malformed("empty component");
    }
    if c.chars().any(|ch| RESERVED.contains(&ch)) {
        return malformed("reserved character in component");
    }
    if c.chars().any(|ch| ch.is_whitespace() || ch.is_control()) {
        return malformed("whitespace or control character in component");
    }
    Ok(())
}

impl FeName {
    pub fn new<S: Into<String>>(
        country: S,
        city: S,
        district: S,
        microservice: S,
        params: Vec<String>,
    ) -> Result<Self, NameError> {
        let name = FeName {
            region: [country.into(), city.into(), district.into()],
            microservice: microservice.into(),
            params,
        };
        for c in name.components() {
            check_component(c)?;
        }
        if name.to_string().len() > MAX_NAME_LEN {
            return malformed("name too long");
        }
        Ok(name)
    }

    pub fn country(&self) -> &str {
        &self.region[0]
    }

    pub fn city(&self) -> &str {
        &self.region[1]
    }

    pub fn district(&self) -> &str {
        &self.region[2]
    }

    pub fn region(&self) -> &[String; 3] {
        &self.region
    }

    pub fn microservice(&self) -> &str {
        &self.microservice
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    /// The same name with its parameter list dropped; this is the form
    /// access records and the catalog are keyed by.
    pub fn without_params(&self) -> FeName {
        FeName {
            region: self.region.clone(),
            microservice: self.microservice.clone(),
            params: Vec::new(),
        }
    }

    pub fn with_params(&self, params: Vec<String>) -> Result<FeName, NameError> {
        let [a, b, c] = self.region.clone();
        FeName::new(a, b, c, self.microservice.clone(), params)
    }

    fn components(&self) -> impl Iterator<Item = &str> {
        self.region
            .iter()
            .chain(std::iter::once(&self.microservice))
            .chain(self.params.iter())
            .map(String::as_str)
    }
}

/// Parses the textual form of a name.
pub fn parse_name(raw: &str) -> Result<FeName, NameError> {
    if raw.is_empty() {
        return malformed("empty input");
    }
    if raw.len() > MAX_NAME_LEN {
        return malformed("name too long");
    }
    let rest = match raw.strip_prefix(SCHEME) {
        Some(rest) => rest,
        None => return malformed("missing FE:/ scheme"),
    };
    let (region, service) = match rest.split_once('|') {
        Some(parts) => parts,
        None => return malformed("missing '|' separator"),
    };
    let region: Vec<&str> = region.trim_end().split('/').collect();
    if region.len() != 3 {
        return malformed("region must have exactly three components");
    }
    let service = service.trim_start();
    let (microservice, params) = match service.split_once('?') {
        Some((m, p)) => {
            let parts: Vec<&str> = p.split(',').collect();
            let last = parts.len() - 1;
            let params = parts
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let s = s.trim_start();
                    if i < last { s.trim_end() } else { s }.to_string()
                })
                .collect();
            (m.trim_end(), params)
        }
        None => (service, Vec::new()),
    };
    FeName::new(region[0], region[1], region[2], microservice, params)
}

/// Canonical wire form, no whitespace.
pub fn serialize_name(n: &FeName) -> String {
    n.to_string()
}

impl fmt::Display for FeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}/{}/{}|{}",
            SCHEME, self.region[0], self.region[1], self.region[2], self.microservice
        )?;
        if !self.params.is_empty() {
            write!(f, "?{}", self.params.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for FeName {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_name(s)
    }
}

/// A region prefix of zero to three components, as held by FIB entries.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RegionPrefix(Vec<String>);

impl RegionPrefix {
    pub fn new<S: AsRef<str>>(components: &[S]) -> Result<Self, NameError> {
        if components.len() > 3 {
            return malformed("region prefix longer than three components");
        }
        let mut out = Vec::with_capacity(components.len());
        for c in components {
            check_component(c.as_ref())?;
            out.push(c.as_ref().to_string());
        }
        Ok(RegionPrefix(out))
    }

    pub fn root() -> Self {
        RegionPrefix(Vec::new())
    }

    pub fn of(name: &FeName, len: usize) -> Self {
        RegionPrefix(name.region[..len.min(3)].to_vec())
    }

    pub fn components(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when every component of the prefix matches the name.
    pub fn covers(&self, name: &FeName) -> bool {
        region_prefix_match(name, &self.0) == self.0.len()
    }
}

impl fmt::Display for RegionPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}", self.0.join("/"))
    }
}

/// Number of leading region components of `n` equal to `prefix`.
pub fn region_prefix_match<S: AsRef<str>>(n: &FeName, prefix: &[S]) -> usize {
    n.region
        .iter()
        .zip(prefix)
        .take_while(|(a, b)| a.as_str() == b.as_ref())
        .count()
}
