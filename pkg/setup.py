
from setuptools import find_packages, setup

setup(
    name='LoraJD',
    packages=find_packages(include=['LoraJD', 'LoraJD.*']),
    version='1.0.0',
    description='Joint diagonalization compression and serving arithmetic for collections of LoRA adapters',
    author='Caijun Qin',
    license='MIT',
    python_requires='>=3.8',
    install_requires=['click>=8.0', 'multimethod>=1.4', 'numpy>=1.19.0', 'param>=1.12', 'scikit-learn>=1.0',
                      'scipy>=1.5'],
    extras_require={'test': ['pytest>=7.0']},
    tests_require=['pytest>=7.0'],
    test_suite='tests',
    entry_points={'console_scripts': ['lora-jd=LoraJD.Cli.Main:main']}
)
