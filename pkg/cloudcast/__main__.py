"""main module for the cloudcast package"""

from . import shell


if __name__ == '__main__':
    shell.main()
