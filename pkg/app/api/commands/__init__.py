from app.api.commands import algebra, analysis, training

COMMAND_GROUPS = (algebra, training, analysis)
