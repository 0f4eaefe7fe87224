//! Anchor extraction from fetched page bodies.

use regex::Regex;
use std::sync::OnceLock;

use url::Url;

use crate::urls::normalize_url;

fn anchor_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?is)<a\s[^>]*?href\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+))"#).unwrap()
    })
}

/// Pull every anchor href out of `body`, normalized against `base`.
/// Within-page duplicates are removed; first-occurrence order is kept.
/// Non-HTML or undecodable bodies simply produce no links.
pub fn extract_links(body: &[u8], base: &Url) -> Vec<Url> {
    let text = String::from_utf8_lossy(body);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for caps in anchor_re().captures_iter(&text) {
        let raw = caps.get(1).or_else(|| caps.get(2)).or_else(|| caps.get(3)).map(|m| m.as_str());
        let Some(raw) = raw else { continue };
        let decoded = decode_entities(raw);
        let Ok(url) = normalize_url(&decoded, Some(base)) else {
            continue; // malformed or non-http target: skip the link
        };
        if seen.insert(url.as_str().to_string()) {
            out.push(url);
        }
    }
    out
}

/// Minimal entity decoding for the characters that legitimately appear in
/// href values.
fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    s.replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&#x27;", "'")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Url {
        Url::parse("http://site.test/dir/page").unwrap()
    }

    #[test]
    fn extracts_in_document_order_deduplicated() {
        let body = br#"<html><body>
            <a href="http://a.com/">first</a>
            <p><A HREF='http://b.com/x'>second</A></p>
            <a class="again" href="http://a.com/">dup</a>
        </body></html>"#;
        let links = extract_links(body, &base());
        let strs: Vec<_> = links.iter().map(|u| u.as_str()).collect();
        assert_eq!(strs, vec!["http://a.com/", "http://b.com/x"]);
    }

    #[test]
    fn resolves_relative_and_skips_junk() {
        let body = br#"
            <a href="/abs">abs</a>
            <a href="rel">rel</a>
            <a href="javascript:void(0)">js</a>
            <a href="mailto:a@b.c">mail</a>
            <a name="anchor-without-href">none</a>
            <a href=unquoted>bare</a>
        "#;
        let links = extract_links(body, &base());
        let strs: Vec<_> = links.iter().map(|u| u.as_str()).collect();
        assert_eq!(strs, vec!["http://site.test/abs", "http://site.test/dir/rel", "http://site.test/dir/unquoted"]);
    }

    #[test]
    fn decodes_ampersand_entities() {
        let body = br#"<a href="http://a.com/q?x=1&amp;y=2">q</a>"#;
        let links = extract_links(body, &base());
        assert_eq!(links[0].as_str(), "http://a.com/q?x=1&y=2");
    }

    #[test]
    fn non_html_bodies_yield_nothing() {
        assert!(extract_links(b"", &base()).is_empty());
        assert!(extract_links(b"plain text, no markup", &base()).is_empty());
        assert!(extract_links(&[0xff, 0xfe, 0x00, 0x01], &base()).is_empty());
    }
}
