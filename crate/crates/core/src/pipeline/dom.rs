//! DOM snapshots with layout geometry, simplification and viewport pruning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Axis-aligned box in page coordinates (CSS pixels).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Rect { x, y, width, height }
    }

    /// True iff the two boxes overlap with strictly positive area.
    pub fn intersects(&self, other: &Rect) -> bool {
        let w = (self.x + self.width).min(other.x + other.width) - self.x.max(other.x);
        let h = (self.y + self.height).min(other.y + other.height) - self.y.max(other.y);
        w > 0.0 && h > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub scroll_x: f64,
    pub scroll_y: f64,
    pub width: f64,
    pub height: f64,
}

impl Viewport {
    pub fn is_valid(&self) -> bool {
        self.width > 0.0 && self.height > 0.0 && self.scroll_x.is_finite() && self.scroll_y.is_finite()
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.scroll_x, self.scroll_y, self.width, self.height)
    }
}

pub const TEXT_TAG: &str = "#text";
pub const COMMENT_TAG: &str = "#comment";

const VOID_TAGS: [&str; 8] = ["area", "br", "col", "embed", "hr", "img", "input", "source"];

/// One element of a recorded page. Text and comment nodes use the tags
/// `#text` and `#comment` and carry their content in `text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
    pub tag: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default)]
    pub rect: Rect,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<DomNode>,
}

impl DomNode {
    pub fn element(tag: &str, rect: Rect) -> Self {
        DomNode {
            node_id: None,
            tag: tag.to_string(),
            attrs: BTreeMap::new(),
            text: String::new(),
            rect,
            children: Vec::new(),
        }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.node_id = Some(id.to_string());
        self
    }

    pub fn with_attr(mut self, k: &str, v: &str) -> Self {
        self.attrs.insert(k.to_string(), v.to_string());
        self
    }

    pub fn with_text(mut self, text: &str) -> Self {
        self.text = text.to_string();
        self
    }

    pub fn with_children(mut self, children: Vec<DomNode>) -> Self {
        self.children = children;
        self
    }

    pub fn count(&self) -> usize {
        1 + self.children.iter().map(DomNode::count).sum::<usize>()
    }

    /// Depth-first search by recording node id.
    pub fn find(&self, node_id: &str) -> Option<&DomNode> {
        if self.node_id.as_deref() == Some(node_id) {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(node_id))
    }

    /// Own and descendant text, whitespace-collapsed.
    pub fn text_content(&self) -> String {
        let mut parts = Vec::new();
        self.collect_text(&mut parts);
        parts.join(" ").split_whitespace().collect::<Vec<_>>().join(" ")
    }

    fn collect_text<'a>(&'a self, out: &mut Vec<&'a str>) {
        if self.tag == COMMENT_TAG {
            return;
        }
        if !self.text.is_empty() {
            out.push(&self.text);
        }
        for c in &self.children {
            c.collect_text(out);
        }
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimplifyConfig {
    /// Element tags removed together with their subtrees.
    pub drop_tags: Vec<String>,
    /// Attributes kept on surviving elements. Inline `style` and `on*`
    /// handlers are removed even if listed.
    pub attribute_allowlist: Vec<String>,
}

impl Default for SimplifyConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|t| t.to_string()).collect();
        SimplifyConfig {
            drop_tags: s(&["script", "style", "meta", "link", "noscript", "template"]),
            attribute_allowlist: s(&["id", "class", "href", "alt", "aria-label", "name", "type", "value"]),
        }
    }
}

impl SimplifyConfig {
    fn drops(&self, tag: &str) -> bool {
        tag == COMMENT_TAG || self.drop_tags.iter().any(|t| t.eq_ignore_ascii_case(tag))
    }

    fn keeps_attr(&self, name: &str) -> bool {
        let lower = name.to_ascii_lowercase();
        lower != "style"
            && !lower.starts_with("on")
            && self.attribute_allowlist.iter().any(|a| a.eq_ignore_ascii_case(name))
    }
}

/// Removes non-content subtrees and non-allowlisted attributes. The root is
/// returned unchanged in tag even if it is itself a dropped tag.
pub fn simplify_html(root: &DomNode, cfg: &SimplifyConfig) -> DomNode {
    DomNode {
        node_id: root.node_id.clone(),
        tag: root.tag.clone(),
        attrs: root
            .attrs
            .iter()
            .filter(|(k, _)| cfg.keeps_attr(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        text: root.text.clone(),
        rect: root.rect,
        children: root
            .children
            .iter()
            .filter(|c| !cfg.drops(&c.tag))
            .map(|c| simplify_html(c, cfg))
            .collect(),
    }
}

/// Keeps nodes whose rect overlaps the viewport with positive area, plus the
/// ancestors of any kept node. Ancestors kept only for structure lose their
/// own text. Returns `None` when nothing on the page is visible.
pub fn prune_to_viewport(root: &DomNode, vp: &Viewport) -> Option<DomNode> {
    let view = vp.rect();
    prune_node(root, &view)
}

fn prune_node(node: &DomNode, view: &Rect) -> Option<DomNode> {
    let children: Vec<DomNode> = node
        .children
        .iter()
        .filter_map(|c| prune_node(c, view))
        .collect();
    let visible = node.rect.intersects(view);
    if !visible && children.is_empty() {
        return None;
    }
    Some(DomNode {
        node_id: node.node_id.clone(),
        tag: node.tag.clone(),
        attrs: node.attrs.clone(),
        text: if visible { node.text.clone() } else { String::new() },
        rect: node.rect,
        children,
    })
}

fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

fn escape_attr(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '<' => out.push_str("&lt;"),
            _ => out.push(c),
        }
    }
}

/// Compact HTML serialization: attributes in name order, no added whitespace.
pub fn render_html(node: &DomNode) -> String {
    let mut out = String::new();
    render_into(node, &mut out);
    out
}

fn render_into(node: &DomNode, out: &mut String) {
    match node.tag.as_str() {
        TEXT_TAG => return escape_text(&node.text, out),
        COMMENT_TAG => {
            out.push_str("<!--");
            out.push_str(&node.text.replace("--", "- -"));
            out.push_str("-->");
            return;
        }
        _ => {}
    }
    let tag = node.tag.to_ascii_lowercase();
    out.push('<');
    out.push_str(&tag);
    for (k, v) in &node.attrs {
        out.push(' ');
        out.push_str(k);
        out.push_str("=\"");
        escape_attr(v, out);
        out.push('"');
    }
    out.push('>');
    if VOID_TAGS.contains(&tag.as_str()) {
        return;
    }
    escape_text(&node.text, out);
    for c in &node.children {
        render_into(c, out);
    }
    out.push_str("</");
    out.push_str(&tag);
    out.push('>');
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vp(x: f64, y: f64, w: f64, h: f64) -> Viewport {
        Viewport { scroll_x: x, scroll_y: y, width: w, height: h }
    }

    #[test]
    fn script_removed() {
        let page = DomNode::element("body", Rect::default()).with_children(vec![
            DomNode::element("script", Rect::default()).with_text("track()"),
            DomNode::element("p", Rect::default()).with_text("hi"),
        ]);
        let s = simplify_html(&page, &SimplifyConfig::default());
        assert_eq!(render_html(&s), "<body><p>hi</p></body>");
    }

    #[test]
    fn attribute_allowlist() {
        let node = DomNode::element("button", Rect::default())
            .with_attr("style", "color:red")
            .with_attr("aria-label", "Add to Cart")
            .with_attr("onclick", "buy()")
            .with_attr("data-x", "1");
        let s = simplify_html(&node, &SimplifyConfig::default());
        assert_eq!(s.attrs.len(), 1);
        assert_eq!(s.attr("aria-label"), Some("Add to Cart"));

        let permissive = SimplifyConfig {
            attribute_allowlist: vec!["style".into(), "onclick".into(), "data-x".into()],
            ..SimplifyConfig::default()
        };
        let s = simplify_html(&node, &permissive);
        assert_eq!(s.attrs.keys().collect::<Vec<_>>(), vec!["data-x"]);
    }

    #[test]
    fn comments_dropped() {
        let page = DomNode::element("div", Rect::default()).with_children(vec![
            DomNode::element(COMMENT_TAG, Rect::default()).with_text("x"),
            DomNode::element(TEXT_TAG, Rect::default()).with_text("a < b"),
        ]);
        assert_eq!(render_html(&simplify_html(&page, &SimplifyConfig::default())), "<div>a &lt; b</div>");
    }

    #[test]
    fn viewport_membership() {
        let view = vp(0.0, 100.0, 800.0, 600.0);
        let inside = DomNode::element("a", Rect::new(10.0, 200.0, 50.0, 20.0));
        let below = DomNode::element("b", Rect::new(10.0, 700.0, 50.0, 20.0));
        let right_half = DomNode::element("c", Rect::new(780.0, 200.0, 40.0, 20.0));
        let touching = DomNode::element("d", Rect::new(800.0, 200.0, 40.0, 20.0));
        let page = DomNode::element("body", Rect::new(0.0, 0.0, 800.0, 3000.0))
            .with_children(vec![inside, below, right_half, touching]);
        let pruned = prune_to_viewport(&page, &view).unwrap();
        let tags: Vec<_> = pruned.children.iter().map(|c| c.tag.as_str()).collect();
        assert_eq!(tags, ["a", "c"]);
    }

    #[test]
    fn offscreen_ancestor_kept_without_text() {
        let page = DomNode::element("div", Rect::new(0.0, -500.0, 10.0, 10.0))
            .with_text("header text")
            .with_children(vec![DomNode::element("span", Rect::new(0.0, 10.0, 10.0, 10.0)).with_text("seen")]);
        let pruned = prune_to_viewport(&page, &vp(0.0, 0.0, 100.0, 100.0)).unwrap();
        assert_eq!(render_html(&pruned), "<div><span>seen</span></div>");
    }

    #[test]
    fn nothing_visible() {
        let page = DomNode::element("div", Rect::new(0.0, 5000.0, 10.0, 10.0));
        assert!(prune_to_viewport(&page, &vp(0.0, 0.0, 100.0, 100.0)).is_none());
    }

    #[test]
    fn zero_area_dropped() {
        let page = DomNode::element("div", Rect::new(0.0, 0.0, 100.0, 100.0))
            .with_children(vec![DomNode::element("i", Rect::new(5.0, 5.0, 0.0, 10.0))]);
        let pruned = prune_to_viewport(&page, &vp(0.0, 0.0, 100.0, 100.0)).unwrap();
        assert!(pruned.children.is_empty());
    }

    #[test]
    fn void_and_escaping() {
        let node = DomNode::element("div", Rect::default()).with_children(vec![
            DomNode::element("img", Rect::default()).with_attr("alt", "\"Mug\" & co"),
        ]);
        assert_eq!(render_html(&node), r#"<div><img alt="&quot;Mug&quot; &amp; co"></div>"#);
    }

    #[test]
    fn text_content_and_find() {
        let node = DomNode::element("button", Rect::default()).with_id("n1").with_children(vec![
            DomNode::element("span", Rect::default()).with_text("  Add to\n"),
            DomNode::element("span", Rect::default()).with_id("n2").with_text("Cart "),
        ]);
        assert_eq!(node.text_content(), "Add to Cart");
        assert_eq!(node.find("n2").unwrap().text, "Cart ");
        assert!(node.find("zzz").is_none());
    }
}
