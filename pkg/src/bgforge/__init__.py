"""bgforge: regenerate image backgrounds with mask-guided inpainting while keeping annotations intact."""

__version__ = "0.1.0"
