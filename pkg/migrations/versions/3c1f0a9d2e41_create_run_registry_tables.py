"""create run registry tables

Revision ID: 3c1f0a9d2e41
Revises: 
Create Date: 2026-10-18 09:12:40.118203

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = '3c1f0a9d2e41'
down_revision: Union[str, Sequence[str], None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


def upgrade() -> None:
    """Upgrade schema."""
    op.create_table('runs',
    sa.Column('id', sa.Integer(), nullable=False),
    sa.Column('command', sa.String(), nullable=False),
    sa.Column('output_dir', sa.String(), nullable=True),
    sa.Column('status', sa.Enum('RUNNING', 'SUCCEEDED', 'FAILED', name='run_status'), server_default='RUNNING', nullable=False),
    sa.Column('seed', sa.Integer(), nullable=False),
    sa.Column('config_hash', sa.String(length=32), nullable=False),
    sa.Column('manifest_json', sa.Text(), nullable=True),
    sa.Column('version', sa.String(), nullable=False),
    sa.Column('error', sa.Text(), nullable=True),
    sa.Column('wall_clock_seconds', sa.Float(), nullable=True),
    sa.Column('started_at', sa.DateTime(timezone=True), server_default=sa.text('CURRENT_TIMESTAMP'), nullable=False),
    sa.Column('finished_at', sa.DateTime(timezone=True), nullable=True),
    sa.PrimaryKeyConstraint('id')
    )
    op.create_index(op.f('ix_runs_command'), 'runs', ['command'], unique=False)
    op.create_index(op.f('ix_runs_id'), 'runs', ['id'], unique=False)
    op.create_table('run_artifacts',
    sa.Column('id', sa.Integer(), nullable=False),
    sa.Column('run_id', sa.Integer(), nullable=False),
    sa.Column('role', sa.String(length=10), server_default='output', nullable=False),
    sa.Column('kind', sa.Enum('DATASET', 'CHECKPOINT', 'REPORT', 'LOSS_CURVE', name='artifact_kind'), nullable=False),
    sa.Column('name', sa.String(), nullable=False),
    sa.Column('path', sa.String(), nullable=False),
    sa.Column('sha256', sa.String(length=64), nullable=False),
    sa.ForeignKeyConstraint(['run_id'], ['runs.id'], ondelete='CASCADE'),
    sa.PrimaryKeyConstraint('id'),
    sa.UniqueConstraint('run_id', 'role', 'name', name='uq_run_artifact_name')
    )


def downgrade() -> None:
    """Downgrade schema."""
    op.drop_table('run_artifacts')
    op.drop_index(op.f('ix_runs_id'), table_name='runs')
    op.drop_index(op.f('ix_runs_command'), table_name='runs')
    op.drop_table('runs')
