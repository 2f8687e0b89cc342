//! The trajectory grammar: parsing the token-delimited text form,
//! round-tripping, structural validation, and token accounting.

use trajalign::trajectory::{
    parse_trajectory, serialize_trajectory, token_count, validate, AgentKind, TokenTable, Tokenizer, Trajectory,
};

fn main() {
    let table = TokenTable::standard();

    // Every agent owns a (head, end) token pair.
    println!("agents and special tokens:");
    for agent in AgentKind::ALL {
        println!("  {:<20} {}  {}", agent.to_string(), table.head(agent), table.end(agent));
    }

    // Parse a serialized trajectory.
    let text = "Q: what is the capital of Velgor?\n\
                ⟨Reconstructor⟩capital of Velgor⟨/eoi⟩\
                ⟨Retriever⟩docs good⟨/eor⟩\
                ⟨Filter⟩keep good⟨/eof⟩\
                ⟨Locator⟩span exact⟨/eol⟩\
                ⟨Generator⟩Ompra⟨/eog⟩\
                ⟨Verifier⟩Correct⟨/eov⟩";
    let trajectory = parse_trajectory(text, &table).expect("well-formed text");
    println!("\nparsed {} steps; final answer {:?}", trajectory.steps.len(), trajectory.final_answer());

    // Serialization is the exact inverse.
    let round_tripped = serialize_trajectory(&trajectory, &table);
    assert_eq!(round_tripped, text);
    println!("serialize(parse(text)) is byte-identical: {}", round_tripped == text);

    // Validation enforces the orderings the inference loop can produce.
    validate(&trajectory).expect("grammar-conforming");
    let decoupled = Trajectory::single_round(
        "q",
        &[
            (AgentKind::IntentReconstructor, "intent"),
            (AgentKind::KnowledgeRetriever, "docs"),
            (AgentKind::ResponseGenerator, "answer"),
        ],
    );
    println!("decoupled retriever (no filter/locator) rejected: {}", validate(&decoupled).unwrap_err());

    // Token accounting: head and end tokens count one each.
    let counts = token_count(&trajectory, Tokenizer::Whitespace);
    println!("\ntoken counts (whitespace tokenizer):");
    for agent in AgentKind::ALL {
        println!("  {:<20} {}", agent.to_string(), counts.get(agent));
    }
    println!("  {:<20} {}", "total", counts.total);
}
