import pytest

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    ".", ",", "?", "!", "(", ")", "-", "/",
    "0", "1", "2", "3", "4", "5", "10", "50",
    "the", "a", "an", "of", "in", "is", "are", "what", "which", "most",
    "common", "cause", "seen", "true", "not", "following", "patient", "with",
    "year", "old", "presents", "treatment", "choice", "drug", "dose", "bone",
    "fracture", "heart", "muscle", "nerve", "blood", "cell", "syndrome",
    "disease", "therapy", "acute", "chronic", "diagnosis", "px",
    "arthr", "##itis", "derm", "##at", "##ology", "##emia",
    "surg", "##ery", "card", "##iac", "##io", "##logy", "hepat",
    "##al", "##ar", "##ic", "##us", "mg", "kg",
]

SAMPLE_QUESTIONS = [
    "What is the most common cause of acute arthritis?",
    "A 50 year old patient presents with chronic hepatitis.",
    "Which drug is the treatment of choice in cardiology?",
    "The dose is 10 mg / kg in a patient with bone fracture.",
    "Which of the following is not true of dermatology?",
    "Anaemia is seen in which syndrome?",
    "What is the diagnosis in a patient with heart disease?",
    "Surgery is the treatment of choice for which fracture?",
    "Which nerve is most commonly seen in the muscle?",
    "Blood cell therapy is the treatment of choice.",
    "WHAT IS THE MOST COMMON CAUSE OF CHRONIC DISEASE?",
    "Cardiac surgery (acute) - which therapy?",
    "Présents with arthritis, dermatitis, and anaemia.",
    "hepatic disease: which drug?",
    "An old patient, a young mystery word: xylophone?",
    "What dose of the drug is true?",
    "Which bone is not seen in the heart?",
    "A patient presents with acute dermatitis!",
    "Is surgery the most common therapy?",
    "The 5 most common causes of cardiac arrest, so to speak.",
    "Chronic hepatitis with anaemia is seen in which patient?",
    "What is the treatment of choice in a 50 kg patient?",
]


@pytest.fixture(scope="session")
def source_model_dir(tmp_path_factory):
    """A small local 384-wide encoder saved in the standard pretrained layout."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizerFast

    root = tmp_path_factory.mktemp("source_model")
    vocab_file = root / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    tokenizer = BertTokenizerFast(vocab=str(vocab_file), do_lower_case=True,
                                  model_max_length=64)
    config = BertConfig(vocab_size=len(VOCAB), hidden_size=384, num_hidden_layers=2,
                        num_attention_heads=6, intermediate_size=512,
                        max_position_embeddings=64)
    torch.manual_seed(1234)
    model = BertModel(config).eval()
    target = root / "model"
    model.save_pretrained(target)
    tokenizer.save_pretrained(target)
    return target


@pytest.fixture(scope="session")
def exported_artifact(source_model_dir, tmp_path_factory):
    from mqseq_exporter.export import export_model

    out_dir = tmp_path_factory.mktemp("artifact") / "encoder384"
    manifest = export_model(str(source_model_dir), out_dir, expect_dim=384)
    return out_dir, manifest
