from .synthesis import (EnergyGrid, IsotopeTemplate, LabeledSpectrum,
                        ShiftConfig, Spectrum, apply_domain_shift,
                        check_simplex, expected_mixture,
                        exponential_background, mix_and_sample,
                        poisson_resample, random_template_bank, synth_template)
from .transforms import (l1_normalize, l1_normalize_batch, preprocess,
                         preprocess_batch)
from .dataset import (Dataset, LabelAccessError, UnlabeledDataset,
                      generate_dataset, load_dataset, save_dataset)

__all__ = [
    "EnergyGrid", "IsotopeTemplate", "LabeledSpectrum", "ShiftConfig",
    "Spectrum", "apply_domain_shift", "check_simplex", "expected_mixture",
    "exponential_background", "mix_and_sample", "poisson_resample",
    "random_template_bank", "synth_template", "l1_normalize",
    "l1_normalize_batch", "preprocess", "preprocess_batch", "Dataset",
    "LabelAccessError", "UnlabeledDataset", "generate_dataset",
    "load_dataset", "save_dataset",
]
