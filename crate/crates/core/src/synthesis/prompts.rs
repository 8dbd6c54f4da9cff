//! Prompt texts sent to the synthesizer and the base model.

use crate::domain::ConceptSpec;

pub fn caption_question() -> String {
    "Generate a descriptive caption question for this image. Reply with the question only.".to_string()
}

pub fn domain_target_question(concept: &ConceptSpec) -> String {
    let domain = concept.domain.as_deref().unwrap_or("the relevant domain");
    format!(
        "Generate a specific question that requires analyzing both the image content and knowledge of {domain}. \
         The question should be answerable based on the image and focus on key domain-specific elements related to {}. \
         Reply with the question only.",
        concept.target_knowledge
    )
}

pub fn contrastive_question(q3: &str, target: &str, unrelated: &str) -> String {
    format!(
        "Modify this domain-specific question to be completely unrelated while keeping the grammatical structure. \
         Requirements: 1. Replace key domain concepts with unrelated ones: replace \"{target}\" with \"{unrelated}\". \
         2. Keep the question format identical. 3. Ensure the new question cannot be answered by the original image. \
         Original question: {q3}"
    )
}

pub fn target_answer(q3: &str, concept: &ConceptSpec) -> String {
    let context = concept
        .description
        .as_deref()
        .map(|d| format!("Here is the contextual information about the image: {d}. "))
        .unwrap_or_default();
    format!(
        "{context}Answer the following question about this image: {q3}. Provide a detailed response that identifies \
         the relevant visual elements in the image, applies appropriate domain knowledge to interpret these elements, \
         and explains the significance of these findings in relation to {}.",
        concept.target_knowledge
    )
}

pub fn concept_extraction(text: &str) -> String {
    format!(
        "Extract the key medical concepts mentioned in the following text. Return one concept per line, \
         without numbering or commentary.\n\nText: {text}"
    )
}
