import pytest

from gelminer import evalgen
from gelminer.cli import PipelineConfig, run_train


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 40-figure annotated corpus shared by the pipeline-level tests."""
    corpus = tmp_path_factory.mktemp("small_corpus")
    figures = evalgen.generate(evalgen.SyntheticSpec(seed=42, figure_count=40))
    evalgen.write_corpus(figures, corpus)
    return corpus, figures


@pytest.fixture(scope="session")
def small_model(tmp_path_factory, small_corpus):
    """A forest trained on half the small corpus."""
    corpus, _ = small_corpus
    model_path = tmp_path_factory.mktemp("small_model") / "model.json"
    cfg = PipelineConfig(input_dir=corpus, model_path=model_path, seed=5)
    model, report = run_train(cfg)
    return model_path, model, report
