import logging
import sys

import click
from pydantic import ValidationError

from serenade import SRNC_VERSION, SRNF_VERSION, SRNW_VERSION, __version__
from serenade.config import load_settings, parse_overrides
from serenade.pipeline.commands.conversion import convert_command, evaluate, postprocess
from serenade.pipeline.commands.corpus import augment, extract, synth_corpus
from serenade.pipeline.commands.training import cycle_gen, finetune, train_command
from serenade.pipeline.utils.errors import SerenadeError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
VERSION_MESSAGE = (
    f"%(prog)s %(version)s (SRNF v{SRNF_VERSION}, SRNW v{SRNW_VERSION}, SRNC v{SRNC_VERSION})"
)


def report_error(code: int, message: str) -> None:
    """Escreve o erro no formato `ERR <código>: <mensagem>` em stderr."""
    click.echo(f"ERR {code}: {message}", err=True)


class SerenadeGroup(click.Group):
    """
    Grupo de comandos que converte todas as falhas em códigos de saída:
    uso incorreto 2, arquivo ausente ou malformado 3, falha numérica 4.
    """

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.UsageError as e:
            code, message = 2, e.format_message()
        except click.ClickException as e:
            code, message = e.exit_code, e.format_message()
        except click.Abort:
            code, message = 1, "interrompido"
        except SerenadeError as e:
            code, message = e.exit_code, e.message
        except ValidationError as e:
            code, message = 2, f"dados inválidos: {e.errors()[0]['msg']}"
        except FileNotFoundError as e:
            code, message = 3, f"arquivo não encontrado: {e.filename}"
        except Exception as e:
            logger.exception("erro inesperado")
            code, message = 1, f"erro interno inesperado: {e}"
        else:
            if not standalone_mode:
                return rv
            sys.exit(rv if isinstance(rv, int) else 0)
        report_error(code, message)
        sys.exit(code)


@click.group(cls=SerenadeGroup)
@click.option("--config", "config_path", default=None, help="Arquivo de configuração `chave = valor`")
@click.option("--set", "overrides", multiple=True, metavar="CHAVE=VALOR", help="Sobrescreve uma chave (repetível)")
@click.option("--jobs", type=int, default=None, help="Processos paralelos de extração e avaliação")
@click.option("--log-level", default=None, help="Nível de log (DEBUG, INFO, WARNING, ...)")
@click.version_option(__version__, prog_name="serenade", message=VERSION_MESSAGE)
@click.pass_context
def cli(ctx: click.Context, config_path, overrides, jobs, log_level):
    """Serenade: conversão de estilo de canto por preenchimento de mel."""
    values = parse_overrides(list(overrides))
    if jobs is not None:
        values["JOBS"] = jobs
    if log_level is not None:
        values["LOG_LEVEL"] = log_level
    settings = load_settings(config_path, values)
    logging.basicConfig(level=settings.LOG_LEVEL, format=LOG_FORMAT, force=True)
    logger.debug("configuração: %s", settings.model_dump())
    ctx.obj = settings


cli.add_command(synth_corpus)
cli.add_command(extract)
cli.add_command(augment)
cli.add_command(train_command)
cli.add_command(cycle_gen)
cli.add_command(finetune)
cli.add_command(convert_command)
cli.add_command(postprocess)
cli.add_command(evaluate)


if __name__ == "__main__":
    cli(prog_name="serenade")
