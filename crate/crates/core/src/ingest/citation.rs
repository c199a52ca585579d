use super::{DocumentMetadata, IngestError};

const MAX_LISTED_AUTHORS: usize = 3;

/// "Surname, Given Names" becomes "Surname G N"; anything else is kept as is.
fn author_label(author: &str) -> String {
    let author = author.trim();
    match author.split_once(',') {
        Some((surname, given)) => {
            let initials: Vec<String> = given
                .split(|c: char| c.is_whitespace() || c == '.' || c == '-')
                .filter_map(|part| part.chars().next())
                .map(|c| c.to_uppercase().to_string())
                .collect();
            if initials.is_empty() {
                surname.trim().to_string()
            } else {
                format!("{} {}", surname.trim(), initials.join(" "))
            }
        }
        None => author.to_string(),
    }
}

fn non_empty(s: Option<&str>) -> Option<&str> {
    s.map(str::trim).filter(|s| !s.is_empty())
}

/// Formats a reference-list entry:
/// `Surname I, Surname I, Surname I, et al. Journal, Year, Vol(Issue): Pages.`
///
/// Missing fields are left out together with their separators. When there
/// are no authors the title takes their place.
pub fn format_citation(metadata: &DocumentMetadata) -> Result<String, IngestError> {
    let authors: Vec<String> = metadata
        .authors
        .iter()
        .map(|a| author_label(a))
        .filter(|a| !a.is_empty())
        .collect();

    let lead = if authors.is_empty() {
        match non_empty(Some(&metadata.title)) {
            Some(title) => title.trim_end_matches('.').to_string(),
            None => {
                return Err(IngestError::Citation(format!(
                    "{}: no authors and no title",
                    metadata.doc_id
                )))
            }
        }
    } else {
        let mut listed = authors
            .iter()
            .take(MAX_LISTED_AUTHORS)
            .cloned()
            .collect::<Vec<_>>()
            .join(", ");
        if authors.len() > MAX_LISTED_AUTHORS {
            listed.push_str(", et al");
        }
        listed
    };

    let mut source: Vec<String> = Vec::new();
    if let Some(journal) = non_empty(Some(&metadata.journal)) {
        source.push(journal.to_string());
    }
    if let Some(year) = metadata.year {
        source.push(year.to_string());
    }
    let mut volume = non_empty(metadata.volume.as_deref())
        .map(str::to_string)
        .unwrap_or_default();
    if let Some(issue) = non_empty(metadata.issue.as_deref()) {
        volume.push_str(&format!("({issue})"));
    }
    if !volume.is_empty() {
        source.push(volume);
    }
    if let Some(pages) = non_empty(metadata.pages.as_deref()) {
        match source.last_mut() {
            Some(last) => last.push_str(&format!(": {pages}")),
            None => source.push(pages.to_string()),
        }
    }

    if source.is_empty() {
        Ok(format!("{lead}."))
    } else {
        Ok(format!("{lead}. {}.", source.join(", ")))
    }
}
