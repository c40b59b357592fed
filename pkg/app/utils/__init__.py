from .file_utils import artifact_path, ensure_dir, load_model, load_suite, save_model
