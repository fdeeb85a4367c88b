"""
Commands Package - Initialize all command blueprints
"""

from .qwd_commands import qwd_bp
from .qlp_commands import qlp_bp
from .train_commands import train_bp
from .metrics_commands import metrics_bp
from .check_commands import check_bp

def register_blueprints(app):
    """Register all command blueprints with the Flask app."""
    app.register_blueprint(qwd_bp)
    app.register_blueprint(qlp_bp)
    app.register_blueprint(train_bp)
    app.register_blueprint(metrics_bp)
    app.register_blueprint(check_bp)
