# src/main.py
import logging
from typing import List, Optional

import typer
from dotenv import load_dotenv

# 1. Configurar logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# 2. Cargar las variables de entorno (LOCOSTL_*) ANTES de leer configuraciones
load_dotenv()

# 3. Importar módulos después de configurar el entorno
from . import __version__  # noqa: E402
from .api.commands import register  # noqa: E402
from .services.surrogate_service import WEIGHTS_FORMAT_VERSION  # noqa: E402

# 4. Crear la aplicación
app = typer.Typer(
    name="locostl",
    help="MPC guiada por STL para recuperación de empujones en un modelo reducido de bípedo",
    no_args_is_help=True,
    add_completion=False,
)


def _print_version(value: bool) -> None:
    if value:
        typer.echo(f"locostl {__version__} (formato de pesos v{WEIGHTS_FORMAT_VERSION})")
        raise typer.Exit()


# 5. Opciones globales
@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Registro en nivel DEBUG"),
    version: Optional[bool] = typer.Option(None, "--version", callback=_print_version, is_eager=True, help="Versión y salir"),
) -> None:
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.debug("🔧 Modo detallado activado")


# 6. Registrar comandos
register(app)


def run(argv: Optional[List[str]] = None) -> int:
    """Ejecuta la CLI y devuelve el código de salida."""
    try:
        app(args=argv)
    except SystemExit as e:
        return int(e.code or 0)
    return 0


# 7. Punto de entrada
if __name__ == "__main__":
    raise SystemExit(run())
