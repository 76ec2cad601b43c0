//! Synthetic key/value forms for desk-scale experiments.
//!
//! Each generated page lays out key/value pairs on a row grid with jitter.
//! Keys are drawn from per-field paraphrase pools, so the printed key and the
//! abstract field name usually differ. Values are always on the key's row,
//! to its right, separated by a gap wider than the intra-phrase spacing.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{normalize_box, Document, OcrWord, PixelBox, QueryAnnotation};
use super::DataError;

/// Template family; training on one and evaluating on the other is the
/// transfer setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormStyle {
    Fax,
    Invoice,
}

impl std::str::FromStr for FormStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fax" => Ok(Self::Fax),
            "invoice" => Ok(Self::Invoice),
            other => Err(format!("unknown form style {other:?} (fax|invoice)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub fields: usize,
    pub page_width: u32,
    pub page_height: u32,
    /// Maximum positional jitter in pixels.
    pub jitter_px: u32,
    /// Extra lines of distractor text.
    pub noise_lines: usize,
    pub style: FormStyle,
    /// Probability of a two-column layout when it fits.
    pub two_column_prob: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            fields: 8,
            page_width: 850,
            page_height: 1100,
            jitter_px: 6,
            noise_lines: 2,
            style: FormStyle::Fax,
            two_column_prob: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum ValueKind {
    Date,
    Money,
    Code(&'static str),
    Person,
    Company,
    Phone,
    Count,
    Subject,
    Terms,
    Email,
}

struct FieldTemplate {
    name: &'static str,
    keys: &'static [&'static str],
    kind: ValueKind,
}

const FAX_FIELDS: &[FieldTemplate] = &[
    FieldTemplate {
        name: "recipient",
        keys: &["To:", "Attention:", "Deliver To:", "Recipient"],
        kind: ValueKind::Person,
    },
    FieldTemplate {
        name: "sender",
        keys: &["From:", "Sender:", "Sent By:", "Originator"],
        kind: ValueKind::Person,
    },
    FieldTemplate {
        name: "date",
        keys: &["Date:", "Date Sent:", "Transmission Date", "Sent On:"],
        kind: ValueKind::Date,
    },
    FieldTemplate {
        name: "fax_number",
        keys: &["Fax:", "Fax No.", "Facsimile Number:", "Fax #"],
        kind: ValueKind::Phone,
    },
    FieldTemplate {
        name: "phone_number",
        keys: &["Phone:", "Tel:", "Telephone:", "Phone No."],
        kind: ValueKind::Phone,
    },
    FieldTemplate {
        name: "page_count",
        keys: &[
            "No. of Pages:",
            "Number of Pages Including Cover Sheet:",
            "Pages:",
            "Total Pages",
        ],
        kind: ValueKind::Count,
    },
    FieldTemplate {
        name: "subject",
        keys: &["Subject:", "Re:", "Regarding:", "Topic:"],
        kind: ValueKind::Subject,
    },
    FieldTemplate {
        name: "company",
        keys: &["Company:", "Organization:", "Firm:", "Company Name:"],
        kind: ValueKind::Company,
    },
    FieldTemplate {
        name: "reference_number",
        keys: &["Ref. No.", "Reference:", "Our Ref:", "File No."],
        kind: ValueKind::Code("REF"),
    },
    FieldTemplate {
        name: "email",
        keys: &["Email:", "E-mail Address:", "Reply To:", "Contact Email"],
        kind: ValueKind::Email,
    },
    FieldTemplate {
        name: "cost_center",
        keys: &["Cost Center:", "Charge Code:", "Account:", "Billing Code"],
        kind: ValueKind::Code("CC"),
    },
    FieldTemplate {
        name: "return_date",
        keys: &["Return By:", "Respond By:", "Deadline:", "Reply Date"],
        kind: ValueKind::Date,
    },
];

const INVOICE_FIELDS: &[FieldTemplate] = &[
    FieldTemplate {
        name: "invoice_number",
        keys: &["Invoice No.", "Invoice Number:", "Inv #", "Bill Number:"],
        kind: ValueKind::Code("INV"),
    },
    FieldTemplate {
        name: "invoice_date",
        keys: &[
            "Invoice Date:",
            "Date of Invoice:",
            "Billing Date:",
            "Date Issued:",
        ],
        kind: ValueKind::Date,
    },
    FieldTemplate {
        name: "due_date",
        keys: &["Due Date:", "Payment Due:", "Pay By:", "Due On:"],
        kind: ValueKind::Date,
    },
    FieldTemplate {
        name: "total_amount",
        keys: &["Total Amount:", "Grand Total:", "Total:", "Invoice Total"],
        kind: ValueKind::Money,
    },
    FieldTemplate {
        name: "amount_due",
        keys: &[
            "Amount Due:",
            "Balance Due:",
            "Please Pay:",
            "Amount Payable",
        ],
        kind: ValueKind::Money,
    },
    FieldTemplate {
        name: "total_tax",
        keys: &["Total Tax:", "Tax Amount:", "VAT:", "Sales Tax"],
        kind: ValueKind::Money,
    },
    FieldTemplate {
        name: "purchase_order",
        keys: &["PO Number:", "Purchase Order:", "P.O. #", "Order Ref:"],
        kind: ValueKind::Code("PO"),
    },
    FieldTemplate {
        name: "customer_name",
        keys: &["Customer:", "Bill To:", "Client Name:", "Sold To:"],
        kind: ValueKind::Person,
    },
    FieldTemplate {
        name: "vendor_name",
        keys: &["Vendor:", "Supplier:", "Remit To:", "Bill From:"],
        kind: ValueKind::Company,
    },
    FieldTemplate {
        name: "phone_number",
        keys: &["Phone:", "Tel:", "Telephone:", "Phone No."],
        kind: ValueKind::Phone,
    },
    FieldTemplate {
        name: "account_number",
        keys: &["Account No.", "Acct #", "Account Number:", "Customer ID:"],
        kind: ValueKind::Code("AC"),
    },
    FieldTemplate {
        name: "payment_terms",
        keys: &["Terms:", "Payment Terms:", "Terms of Payment", "Net Terms:"],
        kind: ValueKind::Terms,
    },
];

const FIRST: &[&str] = &[
    "John", "Mary", "Robert", "Linda", "James", "Susan", "David", "Karen", "Thomas", "Nancy",
    "Paul", "Helen", "Mark", "Sandra", "Steven", "Donna", "Brian", "Carol", "Kevin", "Ruth",
];
const LAST: &[&str] = &[
    "Smith", "Johnson", "Brown", "Miller", "Davis", "Wilson", "Moore", "Taylor", "Thomas",
    "Jackson", "White", "Harris", "Martin", "Clark", "Lewis", "Walker", "Young", "Allen", "King",
    "Wright",
];
const COMPANY_A: &[&str] = &[
    "Acme",
    "Globex",
    "Initech",
    "Umbrella",
    "Stark",
    "Wayne",
    "Hooli",
    "Vandelay",
    "Tyrell",
    "Cyberdyne",
    "Soylent",
    "Wonka",
];
const COMPANY_B: &[&str] = &[
    "Corp",
    "Inc.",
    "Industries",
    "Labs",
    "Group",
    "Holdings",
    "LLC",
    "Partners",
];
const SUBJECT: &[&str] = &[
    "quarterly",
    "report",
    "meeting",
    "schedule",
    "contract",
    "review",
    "budget",
    "proposal",
    "shipment",
    "update",
    "invoice",
    "request",
    "samples",
    "results",
    "policy",
    "draft",
];
const MONTHS: &[&str] = &[
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];
const TERMS: &[&str] = &[
    "Net 30",
    "Net 15",
    "Net 60",
    "Due on receipt",
    "COD",
    "2/10 Net 30",
];
const DOMAINS: &[&str] = &[
    "acme.com",
    "globex.net",
    "initech.org",
    "hooli.io",
    "mail.com",
];
const FAX_TITLES: &[&str] = &[
    "FAX TRANSMISSION",
    "Facsimile Cover Sheet",
    "FAX",
    "Telecopy Message",
];
const INVOICE_TITLES: &[&str] = &["INVOICE", "Tax Invoice", "Commercial Invoice", "BILL"];
const NOISE: &[&str] = &[
    "Confidential",
    "Thank you for your business",
    "Please call if any pages are missing",
    "This message is intended only for the addressee",
    "Printed on recycled paper",
    "See reverse for terms and conditions",
    "Original copy",
    "Urgent",
    "For review",
];

fn gen_value<R: Rng + ?Sized>(kind: ValueKind, rng: &mut R) -> String {
    match kind {
        ValueKind::Date => match rng.random_range(0..3) {
            0 => format!(
                "{:02}/{:02}/{}",
                rng.random_range(1..=12),
                rng.random_range(1..=28),
                rng.random_range(1985..=2024)
            ),
            1 => format!(
                "{}-{:02}-{:02}",
                rng.random_range(1985..=2024),
                rng.random_range(1..=12),
                rng.random_range(1..=28)
            ),
            _ => format!(
                "{} {}, {}",
                MONTHS.choose(rng).unwrap(),
                rng.random_range(1..=28),
                rng.random_range(1985..=2024)
            ),
        },
        ValueKind::Money => {
            let cents: u32 = rng.random_range(100..2_000_000);
            let whole = cents / 100;
            let s = if whole >= 1000 {
                format!("{},{:03}.{:02}", whole / 1000, whole % 1000, cents % 100)
            } else {
                format!("{whole}.{:02}", cents % 100)
            };
            if rng.random_bool(0.7) {
                format!("${s}")
            } else {
                format!("{s} USD")
            }
        }
        ValueKind::Code(prefix) => {
            let n: u32 = rng.random_range(1000..99999);
            match rng.random_range(0..3) {
                0 => format!("{prefix}-{n}"),
                1 => format!("{prefix} {n}"),
                _ => format!("{n}"),
            }
        }
        ValueKind::Person => format!(
            "{} {}",
            FIRST.choose(rng).unwrap(),
            LAST.choose(rng).unwrap()
        ),
        ValueKind::Company => format!(
            "{} {}",
            COMPANY_A.choose(rng).unwrap(),
            COMPANY_B.choose(rng).unwrap()
        ),
        ValueKind::Phone => format!(
            "({}) {}-{:04}",
            rng.random_range(200..999),
            rng.random_range(200..999),
            rng.random_range(0..10000)
        ),
        ValueKind::Count => format!("{}", rng.random_range(1..=30)),
        ValueKind::Subject => {
            let n = rng.random_range(1..=3);
            let words: Vec<&str> = SUBJECT.choose_multiple(rng, n).copied().collect();
            let mut s = words.join(" ");
            if let Some(first) = s.get_mut(0..1) {
                first.make_ascii_uppercase();
            }
            s
        }
        ValueKind::Terms => TERMS.choose(rng).unwrap().to_string(),
        ValueKind::Email => format!(
            "{}.{}@{}",
            FIRST.choose(rng).unwrap().to_lowercase(),
            LAST.choose(rng).unwrap().to_lowercase(),
            DOMAINS.choose(rng).unwrap()
        ),
    }
}

struct Builder {
    words: Vec<OcrWord>,
    page_width: u32,
    page_height: u32,
    char_w: f64,
    height: u32,
}

impl Builder {
    fn width_of(&self, text: &str) -> u32 {
        (text.chars().count() as f64 * self.char_w).round().max(1.0) as u32
    }

    fn space(&self) -> u32 {
        (self.char_w * 0.6).round() as u32
    }

    fn phrase_width(&self, phrase: &str) -> u32 {
        let parts: Vec<&str> = phrase.split_whitespace().collect();
        let w: u32 = parts.iter().map(|p| self.width_of(p)).sum();
        w + self.space() * parts.len().saturating_sub(1) as u32
    }

    /// Places a phrase starting at (x, y); returns the word ids and the end x.
    fn place(&mut self, phrase: &str, x: u32, y: u32) -> Result<(Vec<usize>, u32), DataError> {
        let mut ids = Vec::new();
        let mut cx = x;
        for part in phrase.split_whitespace() {
            let w = self.width_of(part);
            let px_box = PixelBox {
                x0: cx,
                y0: y,
                x1: cx + w,
                y1: y + self.height,
            };
            if px_box.x1 > self.page_width || px_box.y1 > self.page_height {
                return Err(DataError::Overfull(format!(
                    "word {part:?} at {:?} leaves the {}x{} page",
                    px_box.as_array(),
                    self.page_width,
                    self.page_height
                )));
            }
            let id = self.words.len();
            self.words.push(OcrWord {
                id,
                text: part.to_string(),
                bbox: normalize_box(&px_box, self.page_width, self.page_height),
                px_box,
            });
            ids.push(id);
            cx += w + self.space();
        }
        Ok((ids, cx.saturating_sub(self.space())))
    }
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, amount: u32) -> i64 {
    if amount == 0 {
        0
    } else {
        rng.random_range(-(amount as i64)..=amount as i64)
    }
}

fn offset(base: u32, d: i64) -> u32 {
    (base as i64 + d).max(0) as u32
}

/// Generates one annotated synthetic form. Deterministic for a given rng state.
pub fn gen_synthetic_form<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &SynthSpec,
    doc_id: &str,
) -> Result<Document, DataError> {
    let pool = match spec.style {
        FormStyle::Fax => FAX_FIELDS,
        FormStyle::Invoice => INVOICE_FIELDS,
    };
    if spec.fields == 0 || spec.fields > pool.len() {
        return Err(DataError::Overfull(format!(
            "{} fields requested, style has {}",
            spec.fields,
            pool.len()
        )));
    }
    if spec.page_width < 200 || spec.page_height < 200 {
        return Err(DataError::Overfull("page smaller than 200x200 px".into()));
    }

    let height = rng.random_range(12..=15u32);
    let mut b = Builder {
        words: Vec::new(),
        page_width: spec.page_width,
        page_height: spec.page_height,
        char_w: height as f64 * rng.random_range(0.55..0.65),
        height,
    };
    let pitch = (height as f64 * rng.random_range(2.2..2.8)).round() as u32;
    let margin_x = rng.random_range(40..70u32);
    let gap = (b.char_w * rng.random_range(4.0..7.0)).round() as u32;

    let mut chosen: Vec<&FieldTemplate> = pool.choose_multiple(rng, spec.fields).collect();
    chosen.shuffle(rng);
    let pairs: Vec<(&FieldTemplate, String, String)> = chosen
        .into_iter()
        .map(|t| {
            let key = t.keys.choose(rng).unwrap().to_string();
            let value = gen_value(t.kind, rng);
            (t, key, value)
        })
        .collect();

    let titles = match spec.style {
        FormStyle::Fax => FAX_TITLES,
        FormStyle::Invoice => INVOICE_TITLES,
    };
    let mut y = rng.random_range(40..80u32);
    let title = titles.choose(rng).unwrap();
    let tx = offset(spec.page_width / 2, -(b.phrase_width(title) as i64 / 2));
    b.place(title, tx, y)?;
    y += pitch * 2;

    // Two columns only when every pair fits in half the page.
    let half = spec.page_width / 2;
    let fits_half = pairs.iter().all(|(_, k, v)| {
        margin_x + spec.jitter_px + b.phrase_width(k) + gap + b.phrase_width(v) + 4 * gap < half
    });
    let columns = if fits_half && rng.random_bool(spec.two_column_prob) {
        2
    } else {
        1
    };
    let tab_aligned = rng.random_bool(0.5);
    let per_col = pairs.len().div_ceil(columns);

    let mut annotations = Vec::with_capacity(pairs.len());
    let mut max_row_y = y;
    for (c, col) in pairs.chunks(per_col).enumerate() {
        let col_x = if c == 0 {
            margin_x
        } else {
            half + margin_x / 2
        };
        let tab = col
            .iter()
            .map(|(_, k, _)| b.phrase_width(k))
            .max()
            .unwrap_or(0)
            + gap;
        let mut row_y = y;
        for (t, key, value) in col {
            let ry = offset(row_y, jitter(rng, spec.jitter_px / 2));
            let kx = offset(col_x, jitter(rng, spec.jitter_px));
            let (key_ids, key_end) = b.place(key, kx, ry)?;
            let vx = if tab_aligned {
                col_x + tab + jitter(rng, spec.jitter_px).unsigned_abs() as u32
            } else {
                key_end + gap + jitter(rng, spec.jitter_px).unsigned_abs() as u32
            };
            let vy = offset(ry, jitter(rng, 2.min(spec.jitter_px)));
            let (value_ids, _) = b.place(value, vx.max(key_end + gap), vy)?;
            debug_assert!(!key_ids.is_empty());
            annotations.push(QueryAnnotation {
                key_text: key.clone(),
                field_name: Some(t.name.to_string()),
                value_texts: vec![value_ids
                    .iter()
                    .map(|&i| b.words[i].text.as_str())
                    .collect::<Vec<_>>()
                    .join(" ")],
                value_word_ids: vec![value_ids],
            });
            row_y += pitch;
        }
        max_row_y = max_row_y.max(row_y);
    }

    let mut ny = max_row_y + pitch;
    for _ in 0..spec.noise_lines {
        let line = NOISE.choose(rng).unwrap();
        let x = offset(margin_x, jitter(rng, spec.jitter_px * 4));
        b.place(line, x, ny)?;
        ny += pitch;
    }

    let doc = Document {
        doc_id: doc_id.to_string(),
        page_width: spec.page_width,
        page_height: spec.page_height,
        words: b.words,
        annotations,
    };
    doc.validate()?;
    Ok(doc)
}

/// `count` documents, document `i` drawn from its own stream seeded by `(seed, i)`.
pub fn gen_corpus(spec: &SynthSpec, count: usize, seed: u64) -> Result<Vec<Document>, DataError> {
    use rand::SeedableRng;
    (0..count)
        .map(|i| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            gen_synthetic_form(&mut rng, spec, &format!("synth-{seed}-{i:05}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minimal_form() {
        let spec = SynthSpec {
            fields: 1,
            noise_lines: 0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let doc = gen_synthetic_form(&mut rng, &spec, "m").unwrap();
        assert!(doc.words.len() >= 2);
        assert_eq!(doc.annotations.len(), 1);
    }

    #[test]
    fn same_seed_same_document() {
        let spec = SynthSpec::default();
        let a = gen_synthetic_form(&mut ChaCha8Rng::seed_from_u64(3), &spec, "x").unwrap();
        let b = gen_synthetic_form(&mut ChaCha8Rng::seed_from_u64(3), &spec, "x").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overfull_page_is_an_error() {
        let spec = SynthSpec {
            page_height: 300,
            fields: 12,
            two_column_prob: 0.0,
            ..Default::default()
        };
        let err = gen_synthetic_form(&mut ChaCha8Rng::seed_from_u64(1), &spec, "o").unwrap_err();
        assert!(matches!(err, DataError::Overfull(_)));
    }

    #[test]
    fn field_names_differ_from_printed_keys() {
        let docs = gen_corpus(&SynthSpec::default(), 20, 5).unwrap();
        let differing = docs
            .iter()
            .flat_map(|d| &d.annotations)
            .filter(|a| a.field_name.as_deref() != Some(a.key_text.as_str()))
            .count();
        assert_eq!(differing, 20 * 8);
    }
}
