//! Wire format of the HTTP service. `docs/API.md` is rendered from the
//! tables here, and tests check the serde types against them.

pub struct Field {
    pub name: &'static str,
    pub ty: &'static str,
    pub required: bool,
    pub doc: &'static str,
}

pub struct ErrorCase {
    pub status: u16,
    pub code: &'static str,
    pub when: &'static str,
}

pub struct Endpoint {
    pub method: &'static str,
    pub path: &'static str,
    pub summary: &'static str,
    /// JSON body fields, or query parameters for GET.
    pub request: &'static [Field],
    pub response: &'static [Field],
    pub errors: &'static [ErrorCase],
}

const fn f(name: &'static str, ty: &'static str, required: bool, doc: &'static str) -> Field {
    Field {
        name,
        ty,
        required,
        doc,
    }
}

const fn e(status: u16, code: &'static str, when: &'static str) -> ErrorCase {
    ErrorCase { status, code, when }
}

pub const EVENT: &[Field] = &[
    f("intent", "string", true, "intent label; must be in the predictor vocabulary"),
    f("loc", "string", true, "location id; unknown locations are accepted and map to the unknown slot"),
    f("ts", "integer", true, "unix seconds; events must be in non-decreasing order"),
];

pub const SLOT: &[Field] = &[
    f("ts", "integer", true, "unix seconds of the moment to predict"),
    f("loc", "string", false, "location; the last observed one when absent"),
];

pub const RANKED_INTENT: &[Field] = &[
    f("id", "integer", true, "model intent id (vocabulary index + 1)"),
    f("label", "string", true, "intent label"),
    f("probability", "number", true, "probability in [0, 1]"),
];

pub const RULE_MATCH: &[Field] = &[
    f("path", "string[]", true, "Consequent chain from an observed intent to a predicted one"),
    f("confidence", "number", true, "product of edge confidences along the chain"),
];

pub const INTENT_SCORE: &[Field] = &[
    f("intent", "integer", true, "graph node id"),
    f("label", "string", true, "intent label"),
    f("score", "number", true, "matcher score in (0, 1)"),
];

pub const EDGE: &[Field] = &[
    f("src", "integer", true, "source node id"),
    f("src_label", "string", true, "source label"),
    f("kind", "string", true, "IsA, Consequent, Consist or Has"),
    f("dst", "integer", true, "destination node id"),
    f("dst_label", "string", true, "destination label"),
    f("confidence", "number", true, "edge confidence in [0, 1]"),
    f("provenance", "string", true, "lexical, embedding, bayesian, manual or generated"),
];

pub const CHAIN: &[Field] = &[
    f("path", "string[]", true, "labels from the queried intent onwards"),
    f("ids", "integer[]", true, "node ids of `path`"),
    f("confidence", "number", true, "product of edge confidences"),
];

pub const ERROR: &[Field] = &[
    f("code", "string", true, "machine-readable error code"),
    f("field", "string", false, "offending request field, when there is one"),
    f("message", "string", true, "human-readable detail"),
];

pub const ENDPOINTS: &[Endpoint] = &[
    Endpoint {
        method: "POST",
        path: "/v1/predict",
        summary: "Top-K next intents for a user history, with rule explanations.",
        request: &[
            f("events", "Event[]", true, "the user's history, oldest first; at least one"),
            f("k", "integer", false, "number of intents returned; service default when absent"),
            f("beta", "number", false, "rule boost strength, >= 0; service default when absent"),
            f("use_rules", "boolean", false, "apply Consequent rules (default true)"),
            f("slots", "Slot[]", false, "moments to predict, up to the model horizon; default one slot at the last event"),
            f("include_distributions", "boolean", false, "also return the full distribution per slot (default false)"),
        ],
        response: &[
            f("top_k", "RankedIntent[]", true, "intents of the first slot, most probable first, ties by id"),
            f("explanations", "RuleMatch[]", true, "fired chains that end in a returned intent"),
            f("distributions", "number[][]", false, "present when requested"),
            f("fingerprints", "Fingerprints", true, "`model` and `graph` fingerprints"),
        ],
        errors: &[
            e(400, "MALFORMED", "body is not valid JSON for this shape, or has unknown fields"),
            e(400, "VALIDATION", "empty or unsorted `events`, `k` = 0, negative `beta`, too many `slots`"),
            e(400, "UNKNOWN_INTENT", "an event names an intent outside the vocabulary; `field` points at it"),
        ],
    },
    Endpoint {
        method: "POST",
        path: "/v1/label_item",
        summary: "Intents an item expresses, by matcher score.",
        request: &[
            f("id", "string", false, "item id echoed in errors"),
            f("kind", "string", false, "service, bill, coupon, store or review (default service)"),
            f("text", "string", false, "item text; required unless `image` is given"),
            f("image", "number[]", false, "precomputed image vector of the trained width"),
            f("top_k", "integer", false, "maximum number of labels; service default when absent"),
            f("threshold", "number", false, "minimum score in [0, 1]; service default when absent"),
        ],
        response: &[
            f("labels", "IntentScore[]", true, "best first, ties by node id"),
            f("fingerprints", "Fingerprints", true, "`matcher` and `graph` fingerprints"),
        ],
        errors: &[
            e(400, "MALFORMED", "body is not valid JSON for this shape, or has unknown fields"),
            e(400, "VALIDATION", "no text and no image, wrong image width, bad `top_k` or `threshold`"),
        ],
    },
    Endpoint {
        method: "GET",
        path: "/v1/kg/node",
        summary: "A node with its incident edges and Consequent chains to depth 2.",
        request: &[
            f("id", "integer", false, "node id; one of `id` and `label` is required"),
            f("label", "string", false, "node label, matched after canonicalization"),
            f("kind", "string", false, "intent, function, product or sememe, in any case; narrows the lookup"),
        ],
        response: &[
            f("node", "Node", true, "`id`, `kind`, `label`, `aliases`, `attrs`"),
            f("out_edges", "Edge[]", true, "edges leaving the node"),
            f("in_edges", "Edge[]", true, "edges entering the node"),
            f("chains", "Chain[]", true, "Consequent chains from an intent node, empty for other kinds"),
            f("fingerprints", "Fingerprints", true, "`graph` fingerprint"),
        ],
        errors: &[
            e(400, "VALIDATION", "neither `id` nor `label`, or an unknown `kind`"),
            e(404, "NODE_NOT_FOUND", "no node with that id or label"),
        ],
    },
];

pub const TYPES: &[(&str, &[Field])] = &[
    ("Event", EVENT),
    ("Slot", SLOT),
    ("RankedIntent", RANKED_INTENT),
    ("RuleMatch", RULE_MATCH),
    ("IntentScore", INTENT_SCORE),
    ("Edge", EDGE),
    ("Chain", CHAIN),
    ("Error", ERROR),
];

fn table(out: &mut String, fields: &[Field]) {
    out.push_str("| field | type | required | description |\n|---|---|---|---|\n");
    for f in fields {
        let req = if f.required { "yes" } else { "no" };
        out.push_str(&format!("| `{}` | {} | {} | {} |\n", f.name, f.ty, req, f.doc));
    }
}

/// The API document in Markdown.
pub fn render_markdown() -> String {
    let mut s = String::from(
        "# HTTP API\n\n\
         Generated by `intentkg api-doc` from `crates/gateway/src/api.rs`; do not edit by hand.\n\n\
         All bodies are JSON. Errors use the `Error` shape with a 4xx status. \
         Every successful response carries the fingerprints of the artifacts that produced it.\n",
    );
    for ep in ENDPOINTS {
        s += &format!("\n## {} {}\n\n{}\n\n", ep.method, ep.path, ep.summary);
        s += if ep.method == "GET" { "Query parameters:\n\n" } else { "Request body:\n\n" };
        table(&mut s, ep.request);
        s += "\nResponse:\n\n";
        table(&mut s, ep.response);
        s += "\nErrors:\n\n| status | code | when |\n|---|---|---|\n";
        for e in ep.errors {
            s += &format!("| {} | `{}` | {} |\n", e.status, e.code, e.when);
        }
    }
    s += "\n## Types\n";
    for (name, fields) in TYPES {
        s += &format!("\n### {name}\n\n");
        table(&mut s, fields);
    }
    s
}

pub fn endpoint(path: &str) -> &'static Endpoint {
    ENDPOINTS.iter().find(|e| e.path == path).expect("documented endpoint")
}
